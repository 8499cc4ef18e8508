//! Content hashes chained through the pipeline stages.

use sha2::{Digest, Sha256};

use crate::tensor::{Matrix, Scalar};

#[derive(Default)]
pub struct Fingerprinter {
    hasher: Sha256,
}

impl Fingerprinter {
    pub fn new(domain: &str) -> Self {
        let mut f = Self::default();
        f.str(domain);
        f
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.hasher.update((b.len() as u64).to_le_bytes());
        self.hasher.update(b);
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.bytes(s.as_bytes())
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.hasher.update(v.to_le_bytes());
        self
    }

    pub fn usizes(&mut self, v: &[usize]) -> &mut Self {
        self.u64(v.len() as u64);
        for &x in v {
            self.hasher.update((x as u64).to_le_bytes());
        }
        self
    }

    /// Hashes shape plus the 32-bit little-endian encoding of every entry.
    pub fn matrix<T: Scalar>(&mut self, m: &Matrix<T>) -> &mut Self {
        self.u64(m.rows() as u64).u64(m.cols() as u64);
        for v in m.as_slice() {
            self.hasher.update((v.as_f64() as f32).to_le_bytes());
        }
        self
    }

    pub fn f32s(&mut self, v: &[f32]) -> &mut Self {
        self.u64(v.len() as u64);
        for x in v {
            self.hasher.update(x.to_le_bytes());
        }
        self
    }

    pub fn finish(&self) -> String {
        hex::encode(self.hasher.clone().finalize())
    }
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
