use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

use super::config::Heading;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Avg,
    Patch,
    Cls,
}

/// `[L, d]` activations with a role per position.
///
/// `flipped` records whether the patch positions currently run in reverse
/// raster order.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub data: Var,
    pub roles: Vec<Role>,
    pub flipped: bool,
}

impl TokenSequence {
    /// `patches[n, d]` followed by `cls[1, d]`.
    pub fn from_patches(g: &mut Graph, patches: Var, cls: Var) -> Result<Self> {
        let n = g.shape(patches)[0];
        let data = g.concat_rows(&[patches, cls])?;
        let mut roles = vec![Role::Patch; n];
        roles.push(Role::Cls);
        Ok(Self {
            data,
            roles,
            flipped: false,
        })
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn heading_count(&self) -> usize {
        self.roles.iter().take_while(|r| **r == Role::Avg).count()
    }

    pub fn patch_count(&self) -> usize {
        self.roles.iter().filter(|r| **r == Role::Patch).count()
    }

    /// Whether roles read `[avg x k, patch x n, cls]` for some `k`.
    pub fn is_well_formed(&self) -> bool {
        let k = self.heading_count();
        let rest = &self.roles[k..];
        match rest.split_last() {
            Some((Role::Cls, patches)) => patches.iter().all(|r| *r == Role::Patch),
            _ => false,
        }
    }

    /// Roles must be exactly `[patch x n, cls]`.
    pub fn check_boundary(&self, n: usize) -> Result<()> {
        if self.heading_count() == 0 && self.is_well_formed() && self.patch_count() == n {
            Ok(())
        } else {
            Err(Error::contract(
                "block boundary",
                format!("expected [patch x {n}, cls], got {}", describe(&self.roles)),
            ))
        }
    }

    /// Activation of the class token, `[1, d]`.
    pub fn cls(&self, g: &mut Graph) -> Result<Var> {
        g.slice_rows(self.data, self.len() - 1, 1)
    }
}

fn describe(roles: &[Role]) -> String {
    let mut parts: Vec<(Role, usize)> = Vec::new();
    for &r in roles {
        match parts.last_mut() {
            Some((last, n)) if *last == r => *n += 1,
            _ => parts.push((r, 1)),
        }
    }
    let body: Vec<String> = parts
        .iter()
        .map(|(r, n)| format!("{} x {n}", format!("{r:?}").to_lowercase()))
        .collect();
    format!("[{}]", body.join(", "))
}

/// Constant `[cells, n + 1]` matrix whose row `c` averages the patch
/// positions that fall in spatial cell `c` (cells in raster order).
pub fn grid_pooling(rows: usize, cols: usize, cells: usize, flipped: bool) -> Result<Tensor> {
    let k = Heading::grid_side(cells)
        .filter(|k| rows.is_multiple_of(*k) && cols.is_multiple_of(*k))
        .ok_or_else(|| {
            Error::Config(format!(
                "a {rows}x{cols} patch grid cannot be split into {cells} equal cells"
            ))
        })?;
    let n = rows * cols;
    let (ch, cw) = (rows / k, cols / k);
    let weight = 1.0 / (ch * cw) as f32;
    let mut m = Tensor::zeros(&[cells, n + 1]);
    let data = m.data_mut();
    for pos in 0..n {
        let spatial = if flipped { n - 1 - pos } else { pos };
        let (r, c) = (spatial / cols, spatial % cols);
        let cell = (r / ch) * k + c / cw;
        data[cell * (n + 1) + pos] = weight;
    }
    Ok(m)
}

/// Heading tokens `[N, d]` for a sequence with roles `[patch x n, cls]`, or
/// `None` when the mode adds nothing.
pub fn heading_tokens(
    g: &mut Graph,
    seq: &TokenSequence,
    mode: Heading,
    grid: (usize, usize),
    learned: Option<Var>,
) -> Result<Option<Var>> {
    seq.check_boundary(seq.patch_count())?;
    let token = match mode {
        Heading::Off => return Ok(None),
        Heading::Average => {
            let d = g.shape(seq.data)[1];
            let m = g.mean(seq.data, 0)?;
            g.reshape(m, &[1, d])?
        }
        Heading::Grid(cells) => {
            if grid.0 * grid.1 != seq.patch_count() {
                return Err(Error::dim(
                    "heading",
                    format!("grid {grid:?} for {} patches", seq.patch_count()),
                ));
            }
            let pool = grid_pooling(grid.0, grid.1, cells, seq.flipped)?;
            let pool = g.constant(pool);
            g.matmul(pool, seq.data)?
        }
        Heading::DuplicateCls => seq.cls(g)?,
        Heading::Learnable => learned.ok_or_else(|| {
            Error::contract("heading", "learnable heading needs a token parameter")
        })?,
    };
    Ok(Some(token))
}

/// Places `tokens[N, d]` in front of the sequence as heading positions.
pub fn prepend_tokens(g: &mut Graph, seq: &TokenSequence, tokens: Var) -> Result<TokenSequence> {
    let count = g.shape(tokens)[0];
    let data = g.concat_rows(&[tokens, seq.data])?;
    let mut roles = vec![Role::Avg; count];
    roles.extend_from_slice(&seq.roles);
    Ok(TokenSequence {
        data,
        roles,
        flipped: seq.flipped,
    })
}

/// Prepends the heading tokens of `mode`; `off` returns the input.
pub fn prepend_heading(
    g: &mut Graph,
    seq: &TokenSequence,
    mode: Heading,
    grid: (usize, usize),
    learned: Option<Var>,
) -> Result<TokenSequence> {
    match heading_tokens(g, seq, mode, grid, learned)? {
        Some(t) => prepend_tokens(g, seq, t),
        None => Ok(seq.clone()),
    }
}

/// Removes the heading prefix. A sequence without one is returned as is.
pub fn drop_heading(g: &mut Graph, seq: &TokenSequence) -> Result<TokenSequence> {
    let k = seq.heading_count();
    if k == 0 {
        return Ok(seq.clone());
    }
    Ok(TokenSequence {
        data: g.slice_rows(seq.data, k, seq.len() - k)?,
        roles: seq.roles[k..].to_vec(),
        flipped: seq.flipped,
    })
}

/// Row order that reverses the patch positions between `prefix` leading
/// positions and the trailing class token.
pub fn reversal_index(prefix: usize, patches: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..prefix).collect();
    idx.extend((prefix..prefix + patches).rev());
    idx.push(prefix + patches);
    idx
}

/// Reverses the patch tokens, keeping the class token last.
pub fn flip_patches(g: &mut Graph, seq: &TokenSequence) -> Result<TokenSequence> {
    if seq.heading_count() > 0 {
        return Err(Error::contract(
            "flip_patches",
            "heading tokens must be dropped before flipping",
        ));
    }
    seq.check_boundary(seq.patch_count())?;
    let idx = reversal_index(0, seq.patch_count());
    Ok(TokenSequence {
        data: g.gather_rows(seq.data, &idx)?,
        roles: seq.roles.clone(),
        flipped: !seq.flipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(g: &mut Graph, values: &[f32]) -> TokenSequence {
        let n = values.len() - 1;
        let p = g.constant(Tensor::new(&[n, 1], values[..n].to_vec()).unwrap());
        let c = g.constant(Tensor::new(&[1, 1], vec![values[n]]).unwrap());
        TokenSequence::from_patches(g, p, c).unwrap()
    }

    #[test]
    fn average_heading_includes_cls() {
        let mut g = Graph::new();
        let s = seq(&mut g, &[1.0, 2.0, 3.0]);
        let h = prepend_heading(&mut g, &s, Heading::Average, (1, 2), None).unwrap();
        assert_eq!(g.value(h.data).data(), &[2.0, 1.0, 2.0, 3.0]);
        assert_eq!(h.roles, vec![Role::Avg, Role::Patch, Role::Patch, Role::Cls]);
        let off = prepend_heading(&mut g, &s, Heading::Off, (1, 2), None).unwrap();
        assert_eq!(off, s);
    }

    #[test]
    fn prepend_then_drop_is_identity() {
        let mut g = Graph::new();
        let s = seq(&mut g, &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let h = prepend_heading(&mut g, &s, Heading::Grid(4), (2, 2), None).unwrap();
        assert_eq!(h.heading_count(), 4);
        let d = drop_heading(&mut g, &h).unwrap();
        assert_eq!(g.value(d.data).data(), g.value(s.data).data());
        assert_eq!(d.roles, s.roles);
    }

    #[test]
    fn flip_reverses_patches_only() {
        let mut g = Graph::new();
        let s = seq(&mut g, &[1.0, 2.0, 3.0, 9.0]);
        let f = flip_patches(&mut g, &s).unwrap();
        assert_eq!(g.value(f.data).data(), &[3.0, 2.0, 1.0, 9.0]);
        let ff = flip_patches(&mut g, &f).unwrap();
        assert_eq!(g.value(ff.data).data(), g.value(s.data).data());
        assert!(!ff.flipped);
        let h = prepend_heading(&mut g, &s, Heading::Average, (1, 3), None).unwrap();
        assert!(matches!(flip_patches(&mut g, &h), Err(Error::Contract { .. })));
    }

    #[test]
    fn grid_pooling_follows_orientation() {
        // 2x2 grid, 4 cells: each cell is one patch
        let m = grid_pooling(2, 2, 4, false).unwrap();
        assert_eq!(m.row(1), &[0.0, 1.0, 0.0, 0.0, 0.0]);
        let m = grid_pooling(2, 2, 4, true).unwrap();
        assert_eq!(m.row(0), &[0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(grid_pooling(2, 2, 9, false).is_err());
    }

    #[test]
    fn boundary_description_names_roles() {
        let mut g = Graph::new();
        let s = seq(&mut g, &[1.0, 2.0, 3.0]);
        let h = prepend_heading(&mut g, &s, Heading::Average, (1, 2), None).unwrap();
        let msg = h.check_boundary(2).unwrap_err().to_string();
        assert!(msg.contains("avg x 1, patch x 2, cls x 1"), "{msg}");
    }
}
