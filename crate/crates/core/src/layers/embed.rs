use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::tensor::{Graph, Var};

pub const CHANNELS: usize = 3;

/// Linear projection of non-overlapping `p x p` patches to width `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbedParams {
    pub patch: usize,
    pub dim: usize,
    /// `[3 * p * p, d]`, input ordered channel, row, column within a patch.
    pub weight: ParamId,
    pub bias: ParamId,
}

impl PatchEmbedParams {
    pub fn declare(store: &mut ParamStore, prefix: &str, patch: usize, dim: usize) -> Self {
        Self {
            patch,
            dim,
            weight: store.declare(
                format!("{prefix}.weight"),
                &[CHANNELS * patch * patch, dim],
                Init::FanIn(1.0),
            ),
            bias: store.declare(format!("{prefix}.bias"), &[dim], Init::Const(0.0)),
        }
    }
}

/// Learnable table added to the `n` patch tokens plus the class token.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEmbedding {
    pub len: usize,
    pub table: ParamId,
}

impl PositionalEmbedding {
    pub fn declare(store: &mut ParamStore, name: &str, patches: usize, dim: usize) -> Self {
        Self {
            len: patches + 1,
            table: store.declare(name, &[patches + 1, dim], Init::TruncNormal(0.02)),
        }
    }
}

/// Patch grid `(rows, cols)` for an `h x w` image.
pub fn patch_grid(h: usize, w: usize, p: usize) -> Result<(usize, usize)> {
    if p == 0 || !h.is_multiple_of(p) || !w.is_multiple_of(p) {
        return Err(Error::dim(
            "patchify",
            format!("image {h}x{w} is not divisible into {p}x{p} patches"),
        ));
    }
    Ok((h / p, w / p))
}

/// Flat pixel index for each element of the `[n, 3 p p]` patch matrix, patches
/// in raster order over the grid.
pub fn patch_index(h: usize, w: usize, p: usize) -> Result<Vec<usize>> {
    let (gr, gc) = patch_grid(h, w, p)?;
    let mut idx = Vec::with_capacity(CHANNELS * h * w);
    for gy in 0..gr {
        for gx in 0..gc {
            for c in 0..CHANNELS {
                for py in 0..p {
                    for px in 0..p {
                        idx.push(c * h * w + (gy * p + py) * w + gx * p + px);
                    }
                }
            }
        }
    }
    Ok(idx)
}

/// `image[3, h, w]` to patch tokens `[h w / p^2, d]`.
pub fn patchify(g: &mut Graph, p: &Bound, params: &PatchEmbedParams, image: Var) -> Result<Var> {
    let (h, w) = match g.shape(image) {
        [c, h, w] if *c == CHANNELS => (*h, *w),
        s => {
            return Err(Error::dim(
                "patchify",
                format!("expected [{CHANNELS}, h, w], got {s:?}"),
            ))
        }
    };
    let ps = params.patch;
    let idx = patch_index(h, w, ps)?;
    let n = h * w / (ps * ps);
    let flat = g.reshape(image, &[CHANNELS * h * w, 1])?;
    let gathered = g.gather_rows(flat, &idx)?;
    let patches = g.reshape(gathered, &[n, CHANNELS * ps * ps])?;
    super::linear(g, patches, p[params.weight], Some(p[params.bias]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn token_counts() {
        assert_eq!(patch_grid(224, 224, 16).unwrap(), (14, 14));
        let (r, c) = patch_grid(448, 448, 8).unwrap();
        assert_eq!(r * c, 3136);
        assert!(matches!(patch_grid(30, 32, 4), Err(Error::Dimension { .. })));
    }

    #[test]
    fn zero_image_zero_bias_gives_zero_tokens() {
        let mut store = ParamStore::new(0);
        let pe = PatchEmbedParams::declare(&mut store, "patch", 4, 8);
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let img = g.leaf(Tensor::zeros(&[3, 8, 8]));
        let t = patchify(&mut g, &b, &pe, img).unwrap();
        assert_eq!(g.shape(t), &[4, 8]);
        assert!(g.value(t).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn raster_order() {
        // with p = 2 on a 4x4 image, token 1 is the top-right patch
        let idx = patch_index(4, 4, 2).unwrap();
        let per = 3 * 4;
        assert_eq!(&idx[per..per + 4], &[2, 3, 6, 7]);
        assert_eq!(idx[2 * per], 8);
    }
}
