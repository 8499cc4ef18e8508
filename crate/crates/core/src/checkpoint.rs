//! Versioned binary container for trained models.
//!
//! ```text
//! magic "LNGCKPT\0" | version u32 | kind  (u32 length + UTF-8)
//! spec JSON (u32 length + UTF-8) | metadata JSON map (u32 length + UTF-8)
//! tensor count u32 | per tensor: name (u32 length + UTF-8), rows u64, cols u64, f32 data
//! ```
//! Little-endian throughout. The metadata always carries the model
//! fingerprint, which is recomputed and compared on load.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::classifiers::{Classifier, ClassifierKind, ClassifierSpec};
use crate::data::Preprocessor;
use crate::embedding::{Autoencoder, AutoencoderSpec};
use crate::error::{Error, Result};
use crate::graph::{Gcn, GcnSpec};
use crate::nn::{BnStats, ParamSet};
use crate::tensor::Matrix;

pub const MAGIC: [u8; 8] = *b"LNGCKPT\0";
pub const VERSION: u32 = 1;
pub const FINGERPRINT_KEY: &str = "model_fingerprint";

pub const KIND_AUTOENCODER: &str = "autoencoder";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub spec_json: String,
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Matrix<f32>)>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(
                self.path,
                format!(
                    "truncated while reading {what}: needed {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            )
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::format(self.path, format!("{what} is not UTF-8")))
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        put_str(&mut out, &self.spec_json);
        put_str(&mut out, &serde_json::to_string(&self.meta).expect("string map serializes"));
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, m) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8, "magic")? != MAGIC {
            return Err(Error::format(path, "bad magic bytes; not a model checkpoint"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::format(
                path,
                format!("unsupported checkpoint version {version} (this build reads {VERSION})"),
            ));
        }
        let kind = r.string("kind")?;
        let spec_json = r.string("spec")?;
        let meta: BTreeMap<String, String> = serde_json::from_str(&r.string("metadata")?)
            .map_err(|e| Error::format(path, format!("metadata is not a JSON string map: {e}")))?;
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = r.string("tensor name")?;
            let rows = r.u64("tensor rows")? as usize;
            let cols = r.u64("tensor cols")? as usize;
            let len = rows
                .checked_mul(cols)
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::format(path, format!("implausible shape {rows}x{cols} for {name}")))?;
            let data = r
                .take(len, &format!("tensor {name}"))?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let m = Matrix::from_vec_finite(rows, cols, data)
                .map_err(|e| Error::format(path, format!("tensor {name}: {e}")))?;
            tensors.push((name, m));
        }
        if r.pos != bytes.len() {
            return Err(Error::format(
                path,
                format!("trailing data: expected {} bytes, found {}", r.pos, bytes.len()),
            ));
        }
        Ok(Self {
            kind,
            spec_json,
            meta,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&fs::read(path)?, path)
    }

    fn take_tensor(&mut self, name: &str) -> Result<Matrix<f32>> {
        let i = self
            .tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Input(format!("checkpoint has no tensor {name:?}")))?;
        Ok(self.tensors.remove(i).1)
    }

    fn expect_kind(&self, kinds: &[&str]) -> Result<()> {
        if !kinds.contains(&self.kind.as_str()) {
            return Err(Error::Input(format!(
                "checkpoint holds a {} model, expected {}",
                self.kind,
                kinds.join(" or ")
            )));
        }
        Ok(())
    }

    fn verify(&self, actual: &str) -> Result<()> {
        match self.meta.get(FINGERPRINT_KEY) {
            Some(stored) if stored == actual => Ok(()),
            Some(stored) => Err(Error::Integrity(format!(
                "{} checkpoint fingerprint {actual} does not match recorded {stored}",
                self.kind
            ))),
            None => Err(Error::Integrity(format!("{} checkpoint has no recorded fingerprint", self.kind))),
        }
    }

    pub fn fingerprint(&self) -> Option<&str> {
        self.meta.get(FINGERPRINT_KEY).map(String::as_str)
    }

    pub fn from_autoencoder(ae: &Autoencoder, mut meta: BTreeMap<String, String>) -> Self {
        meta.insert(FINGERPRINT_KEY.into(), ae.fingerprint());
        let mut tensors = params_tensors(&ae.params);
        push_bn(&mut tensors, &ae.bn_stats);
        if let Some(p) = &ae.preprocessor {
            tensors.push(("pre.mean".into(), row(&p.mean)));
            tensors.push(("pre.std".into(), row(&p.std)));
        }
        Self {
            kind: KIND_AUTOENCODER.into(),
            spec_json: serde_json::to_string(&ae.spec).expect("spec serializes"),
            meta,
            tensors,
        }
    }

    pub fn into_autoencoder(mut self) -> Result<Autoencoder> {
        self.expect_kind(&[KIND_AUTOENCODER])?;
        let spec: AutoencoderSpec = serde_json::from_str(&self.spec_json)
            .map_err(|e| Error::Input(format!("autoencoder spec: {e}")))?;
        let preprocessor = if self.tensors.iter().any(|(n, _)| n == "pre.mean") {
            Some(Preprocessor {
                mean: self.take_tensor("pre.mean")?.into_vec(),
                std: self.take_tensor("pre.std")?.into_vec(),
            })
        } else {
            None
        };
        let bn = take_bn(&mut self)?;
        let ae = Autoencoder::from_parts(spec, self.params()?, bn, preprocessor)?;
        self.verify(&ae.fingerprint())?;
        Ok(ae)
    }

    pub fn from_classifier(model: &Classifier, mut meta: BTreeMap<String, String>) -> Self {
        meta.insert(FINGERPRINT_KEY.into(), model.fingerprint());
        let mut tensors = params_tensors(&model.params);
        push_bn(&mut tensors, &model.bn_stats);
        Self {
            kind: model.kind().name().into(),
            spec_json: model.spec.to_json(),
            meta,
            tensors,
        }
    }

    pub fn into_classifier(mut self) -> Result<Classifier> {
        self.expect_kind(&[ClassifierKind::Ffn.name(), ClassifierKind::Attention.name()])?;
        let kind: ClassifierKind = self.kind.parse()?;
        let spec = ClassifierSpec::from_json(kind, &self.spec_json)?;
        let bn = take_bn(&mut self)?;
        let model = Classifier::from_parts(spec, self.params()?, bn)?;
        self.verify(&model.fingerprint())?;
        Ok(model)
    }

    pub fn from_gcn(model: &Gcn, mut meta: BTreeMap<String, String>) -> Self {
        meta.insert(FINGERPRINT_KEY.into(), model.fingerprint());
        Self {
            kind: ClassifierKind::Gcn.name().into(),
            spec_json: serde_json::to_string(&model.spec).expect("spec serializes"),
            meta,
            tensors: params_tensors(&model.params),
        }
    }

    pub fn into_gcn(self) -> Result<Gcn> {
        self.expect_kind(&[ClassifierKind::Gcn.name()])?;
        let spec: GcnSpec =
            serde_json::from_str(&self.spec_json).map_err(|e| Error::Input(format!("gcn spec: {e}")))?;
        let model = Gcn::from_parts(spec, self.params()?)?;
        self.verify(&model.fingerprint())?;
        Ok(model)
    }

    /// Remaining tensors in stored order, as parameters.
    fn params(&self) -> Result<ParamSet<f32>> {
        let mut p = ParamSet::new();
        for (name, m) in &self.tensors {
            if name.starts_with("bn.") || name.starts_with("pre.") {
                return Err(Error::Input(format!("unexpected tensor {name:?} among parameters")));
            }
            p.add(name.clone(), m.clone());
        }
        Ok(p)
    }
}

fn row(v: &[f32]) -> Matrix<f32> {
    Matrix::from_vec(1, v.len(), v.to_vec()).expect("row vector")
}

fn params_tensors(params: &ParamSet<f32>) -> Vec<(String, Matrix<f32>)> {
    params.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
}

fn push_bn(tensors: &mut Vec<(String, Matrix<f32>)>, stats: &[BnStats<f32>]) {
    for (i, s) in stats.iter().enumerate() {
        tensors.push((format!("bn.{i}.mean"), row(&s.running_mean)));
        tensors.push((format!("bn.{i}.var"), row(&s.running_var)));
    }
}

fn take_bn(ck: &mut Checkpoint) -> Result<Vec<BnStats<f32>>> {
    let mut out = Vec::new();
    while ck.tensors.iter().any(|(n, _)| *n == format!("bn.{}.mean", out.len())) {
        let i = out.len();
        out.push(BnStats {
            running_mean: ck.take_tensor(&format!("bn.{i}.mean"))?.into_vec(),
            running_var: ck.take_tensor(&format!("bn.{i}.var"))?.into_vec(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::FfnSpec;

    #[test]
    fn classifier_round_trip_and_tamper() {
        let spec = ClassifierSpec::Ffn(FfnSpec {
            input_width: 4,
            hidden1: 3,
            hidden2: 2,
            num_classes: 3,
            ..FfnSpec::default()
        });
        let model = Classifier::new(spec, 7).unwrap();
        let ck = Checkpoint::from_classifier(&model, BTreeMap::new());
        let bytes = ck.encode();
        let back = Checkpoint::decode(&bytes, Path::new("mem")).unwrap().into_classifier().unwrap();
        assert_eq!(back, model);

        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 1] ^= 0x01;
        let err = Checkpoint::decode(&bad, Path::new("mem")).unwrap().into_classifier().unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
        assert!(matches!(
            Checkpoint::decode(&bytes[..n - 3], Path::new("mem")),
            Err(Error::Format { .. })
        ));
        assert!(Checkpoint::decode(&bytes, Path::new("mem")).unwrap().into_autoencoder().is_err());
    }

    #[test]
    fn autoencoder_round_trip_with_preprocessor() {
        let spec = AutoencoderSpec {
            input_width: 5,
            latent_width: 2,
            encoder_widths: vec![3],
            ..AutoencoderSpec::default()
        };
        let mut ae = Autoencoder::new(spec, 1).unwrap();
        ae.preprocessor = Some(Preprocessor {
            mean: vec![0.5; 5],
            std: vec![2.0; 5],
        });
        let ck = Checkpoint::from_autoencoder(&ae, BTreeMap::new());
        let back = Checkpoint::decode(&ck.encode(), Path::new("mem")).unwrap().into_autoencoder().unwrap();
        assert_eq!(back, ae);
    }
}
