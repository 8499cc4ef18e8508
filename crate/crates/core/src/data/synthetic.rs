//! Desk-scale surrogate for a three-population expression dataset.
//!
//! Every sample is `baseline + population shift + loadings·factors + noise`
//! on a log scale, shifted so the minimum is zero and mapped through `expm1`
//! to non-negative expression-like values. A sample's disease label is
//! written into the signs of the first [`LABEL_CODE_BITS`] shared factors
//! (bit `j` of the class index set ⇒ factor `j` positive).
//!
//! Progenitors always carry their own label in the shared factors. For the
//! downstream populations a Bernoulli draw with probability
//! `shared_signal_strength` decides whether the shared factors carry the true
//! label or a decoy label drawn independently from the class priors; the true
//! label is always written into population-private factors. At strength 1
//! the label function is population-invariant, at strength 0 the shared
//! factors are independent of the label.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{CellType, DiseaseLabel, LabeledDataset};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::{matmul_nn, Matrix};

/// ⌈log₂ 7⌉.
pub const LABEL_CODE_BITS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub genes: usize,
    /// Shared latent factors; the first three encode the label.
    pub factors: usize,
    pub progenitors: usize,
    pub monocytes: usize,
    pub lymphocytes: usize,
    pub shared_signal_strength: f64,
    /// Standard deviation of the per-gene mean shift of downstream populations.
    pub lineage_shift: f64,
    pub noise_sigma: f64,
    /// Indexed by [`DiseaseLabel`] class index; must sum to 1.
    pub class_priors: Vec<f64>,
    pub loading_scale: f64,
    pub baseline: f64,
    /// Minimum magnitude of a label-coding factor.
    pub code_margin: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let disease = 0.7 / 6.0;
        Self {
            genes: 2000,
            factors: 16,
            progenitors: 20_000,
            monocytes: 2_000,
            lymphocytes: 400,
            shared_signal_strength: 1.0,
            lineage_shift: 0.3,
            noise_sigma: 0.5,
            class_priors: vec![0.3, disease, disease, disease, disease, disease, disease],
            loading_scale: 0.25,
            baseline: 3.0,
            code_margin: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.class_priors.len() != DiseaseLabel::COUNT {
            return Err(Error::Config(format!(
                "class_priors must have {} entries, got {}",
                DiseaseLabel::COUNT,
                self.class_priors.len()
            )));
        }
        if self.class_priors.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Config("class_priors must be finite and non-negative".into()));
        }
        let total: f64 = self.class_priors.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("class_priors must sum to 1 (±1e-6), got {total}")));
        }
        if self.factors < LABEL_CODE_BITS {
            return Err(Error::Config(format!(
                "factors must be at least {LABEL_CODE_BITS}, got {}",
                self.factors
            )));
        }
        if self.genes == 0 || self.progenitors == 0 || self.monocytes == 0 || self.lymphocytes == 0 {
            return Err(Error::Config("genes and every population size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.shared_signal_strength) {
            return Err(Error::Config(format!(
                "shared_signal_strength must lie in [0, 1], got {}",
                self.shared_signal_strength
            )));
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("lineage_shift", self.lineage_shift),
            ("loading_scale", self.loading_scale),
            ("code_margin", self.code_margin),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn count(&self, cell: CellType) -> usize {
        match cell {
            CellType::Progenitor => self.progenitors,
            CellType::Monocyte => self.monocytes,
            CellType::Lymphocyte => self.lymphocytes,
        }
    }
}

/// One generated population together with its ground-truth latents.
#[derive(Clone, Debug)]
pub struct SyntheticPopulation {
    pub dataset: LabeledDataset,
    /// `n×factors` shared factor values.
    pub factors: Matrix<f32>,
    /// Class index written into the shared factors (differs from the label
    /// for decoy rows).
    pub shared_code: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct SyntheticLineage {
    pub populations: Vec<SyntheticPopulation>,
    /// Constant added on the log scale before `expm1`.
    pub log_offset: f32,
}

impl SyntheticLineage {
    pub fn get(&self, cell: CellType) -> &SyntheticPopulation {
        &self.populations[cell.code() as usize]
    }

    pub fn into_datasets(self) -> Vec<LabeledDataset> {
        self.populations.into_iter().map(|p| p.dataset).collect()
    }
}

fn normal(s: &mut Stream) -> f64 {
    s.sample::<f64, _>(StandardNormal)
}

fn draw_label(s: &mut Stream, cumulative: &[f64]) -> usize {
    let u: f64 = s.random();
    cumulative
        .iter()
        .position(|&c| u < c)
        .unwrap_or(cumulative.len() - 1)
}

fn code_value(s: &mut Stream, class: usize, bit: usize, margin: f64) -> f64 {
    let mag = margin + normal(s).abs();
    if class >> bit & 1 == 1 {
        mag
    } else {
        -mag
    }
}

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, s: &mut Stream) -> Matrix<f64> {
    let data = (0..rows * cols).map(|_| normal(s) * scale).collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

pub fn generate_synthetic_lineage(config: &SyntheticConfig) -> Result<SyntheticLineage> {
    config.validate()?;
    let seed = config.seed;
    let g = config.genes;
    let k = config.factors;
    let mut cumulative = Vec::with_capacity(DiseaseLabel::COUNT);
    let mut acc = 0.0;
    for p in &config.class_priors {
        acc += p;
        cumulative.push(acc);
    }

    let loadings = gaussian_matrix(k, g, config.loading_scale, &mut rng::stream(seed, "synthetic/loadings"));
    let mut bs = rng::stream(seed, "synthetic/baseline");
    let baseline: Vec<f64> = (0..g).map(|_| config.baseline + bs.random_range(-0.5..0.5)).collect();

    let mut logs = Vec::with_capacity(3);
    let mut latents = Vec::with_capacity(3);
    for cell in CellType::ALL {
        let n = config.count(cell);
        let downstream = cell != CellType::Progenitor;
        let mut shift_stream = rng::stream(seed, &format!("synthetic/shift/{cell}"));
        let shift: Vec<f64> = (0..g)
            .map(|_| if downstream { config.lineage_shift * normal(&mut shift_stream) } else { 0.0 })
            .collect();
        let private = downstream.then(|| {
            gaussian_matrix(
                LABEL_CODE_BITS,
                g,
                config.loading_scale,
                &mut rng::stream(seed, &format!("synthetic/private/{cell}")),
            )
        });

        let mut s = rng::stream(seed, &format!("synthetic/samples/{cell}"));
        let mut labels = Vec::with_capacity(n);
        let mut codes = Vec::with_capacity(n);
        let mut factors = Matrix::<f64>::zeros(n, k);
        let mut private_factors = Matrix::<f64>::zeros(n, LABEL_CODE_BITS);
        for i in 0..n {
            let y = draw_label(&mut s, &cumulative);
            let code = if downstream && s.random::<f64>() >= config.shared_signal_strength {
                draw_label(&mut s, &cumulative)
            } else {
                y
            };
            let row = factors.row_mut(i);
            for (j, f) in row.iter_mut().enumerate() {
                *f = if j < LABEL_CODE_BITS {
                    code_value(&mut s, code, j, config.code_margin)
                } else {
                    normal(&mut s)
                };
            }
            if downstream {
                for (j, p) in private_factors.row_mut(i).iter_mut().enumerate() {
                    *p = code_value(&mut s, y, j, config.code_margin);
                }
            }
            labels.push(y);
            codes.push(code);
        }

        let mut v = matmul_nn(&factors, &loadings)?;
        if let Some(p) = &private {
            v.add_assign(&matmul_nn(&private_factors, p)?);
        }
        let mut noise = rng::stream(seed, &format!("synthetic/noise/{cell}"));
        for i in 0..n {
            for (j, x) in v.row_mut(i).iter_mut().enumerate() {
                *x += baseline[j] + shift[j] + config.noise_sigma * normal(&mut noise);
            }
        }
        logs.push((cell, v, labels));
        latents.push((factors.cast::<f32>(), codes));
    }

    let min = logs
        .iter()
        .flat_map(|(_, v, _)| v.as_slice().iter().copied())
        .fold(f64::INFINITY, f64::min);
    let offset = if min < 0.0 { -min } else { 0.0 };

    let mut populations = Vec::with_capacity(3);
    for ((cell, v, labels), (factors, shared_code)) in logs.into_iter().zip(latents) {
        let x = v.map(|l| (l + offset).exp_m1()).cast::<f32>();
        let mut dataset = LabeledDataset::new(x, labels, cell)?;
        dataset.manifest.insert("source".into(), "synthetic".into());
        dataset.manifest.insert("cell_type".into(), cell.to_string());
        dataset.manifest.insert("seed".into(), seed.to_string());
        dataset.manifest.insert(
            "synthetic_config".into(),
            serde_json::to_string(config).map_err(|e| Error::Input(e.to_string()))?,
        );
        populations.push(SyntheticPopulation {
            dataset,
            factors,
            shared_code,
        });
    }
    Ok(SyntheticLineage {
        populations,
        log_offset: offset as f32,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(strength: f64, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            genes: 60,
            progenitors: 1500,
            monocytes: 1500,
            lymphocytes: 300,
            shared_signal_strength: strength,
            seed,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn invalid_priors_name_the_field() {
        let mut c = SyntheticConfig::default();
        c.class_priors[0] += 0.01;
        let msg = generate_synthetic_lineage(&c).unwrap_err().to_string();
        assert!(msg.contains("class_priors"), "{msg}");
    }

    #[test]
    fn reproducible_per_seed() {
        let a = generate_synthetic_lineage(&small(0.5, 4)).unwrap();
        let b = generate_synthetic_lineage(&small(0.5, 4)).unwrap();
        let c = generate_synthetic_lineage(&small(0.5, 5)).unwrap();
        for cell in CellType::ALL {
            assert_eq!(a.get(cell).dataset, b.get(cell).dataset);
            assert_ne!(a.get(cell).dataset.x, c.get(cell).dataset.x);
        }
    }

    #[test]
    fn expression_is_non_negative() {
        let l = generate_synthetic_lineage(&small(1.0, 1)).unwrap();
        for p in &l.populations {
            assert!(p.dataset.x.as_slice().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn progenitor_label_is_the_sign_pattern() {
        let l = generate_synthetic_lineage(&small(0.0, 2)).unwrap();
        let p = l.get(CellType::Progenitor);
        for (i, &y) in p.dataset.labels.iter().enumerate() {
            let code: usize = (0..LABEL_CODE_BITS)
                .map(|j| usize::from(p.factors[(i, j)] > 0.0) << j)
                .sum();
            assert_eq!(code, y);
        }
    }
}
