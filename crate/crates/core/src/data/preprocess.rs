use crate::error::{Error, Result};
use crate::fingerprint::Fingerprinter;
use crate::tensor::Matrix;

/// `log1p` followed by per-gene standardization, with parameters fit on
/// upstream training rows only.
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessor {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Preprocessor {
    /// Genes with zero spread get unit scale.
    pub fn fit(x: &Matrix<f32>, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Input("cannot fit preprocessing on zero rows".into()));
        }
        let g = x.cols();
        let mut sum = vec![0f64; g];
        let mut sq = vec![0f64; g];
        for &r in rows {
            for (j, &v) in x.row(r).iter().enumerate() {
                if v < 0.0 {
                    return Err(Error::Input(format!(
                        "negative expression value {v} at row {r}, col {j}"
                    )));
                }
                let l = (v as f64).ln_1p();
                sum[j] += l;
                sq[j] += l * l;
            }
        }
        let n = rows.len() as f64;
        let mut mean = Vec::with_capacity(g);
        let mut std = Vec::with_capacity(g);
        for j in 0..g {
            let m = sum[j] / n;
            let var = (sq[j] / n - m * m).max(0.0);
            mean.push(m as f32);
            std.push(if var > 1e-12 { var.sqrt() as f32 } else { 1.0 });
        }
        Ok(Self { mean, std })
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &Matrix<f32>) -> Result<Matrix<f32>> {
        if x.cols() != self.width() {
            return Err(Error::width("preprocessing input", self.width(), x.cols()));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = ((*v as f64).ln_1p() as f32 - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }

    pub fn fingerprint(&self) -> String {
        let mut f = Fingerprinter::new("preprocessor");
        f.f32s(&self.mean).f32s(&self.std);
        f.finish()
    }
}
