/// Per-invocation instrumentation: multiply-accumulate count, resident bytes
/// and a structural fingerprint of the recorded op sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OpCounter {
    pub macs: u64,
    live_bytes: u64,
    peak_bytes: u64,
    fingerprint: u64,
    ops: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl OpCounter {
    pub fn new() -> Self {
        Self {
            fingerprint: FNV_OFFSET,
            ..Default::default()
        }
    }

    pub fn add_macs(&mut self, n: u64) {
        self.macs += n;
    }

    /// Bytes that stay resident (recorded tensors).
    pub fn retain(&mut self, bytes: u64) {
        self.live_bytes += bytes;
        self.peak_bytes = self.peak_bytes.max(self.live_bytes);
    }

    /// Bytes held only while one op runs.
    pub fn scratch(&mut self, bytes: u64) {
        self.peak_bytes = self.peak_bytes.max(self.live_bytes + bytes);
    }

    pub fn peak_bytes(&self) -> u64 {
        self.peak_bytes
    }

    pub fn live_bytes(&self) -> u64 {
        self.live_bytes
    }

    pub fn ops(&self) -> u64 {
        self.ops
    }

    /// Folds an op name and its output shape into the fingerprint.
    pub fn record(&mut self, name: &str, shape: &[usize]) {
        self.ops += 1;
        let mut h = self.fingerprint;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(FNV_PRIME);
            }
        };
        eat(name.as_bytes());
        for &e in shape {
            eat(&(e as u64).to_le_bytes());
        }
        eat(b";");
        self.fingerprint = h;
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }
}
