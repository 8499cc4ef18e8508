//! Feed-forward and multi-head self-attention classifiers on latent embeddings.
//!
//! Both emit raw logits; with two classes a single logit is used with a
//! sigmoid, otherwise one logit per class with a softmax.

mod attention;
mod ffn;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fingerprint::Fingerprinter;
use crate::metrics::accuracy;
use crate::nn::ops::{self, sigmoid, softmax_rows, LossKind, Target};
use crate::nn::{adam_step, AdamState, BnStats, ForwardCtx, GradientTape, ParamSet, Var};
use crate::rng;
use crate::tensor::{Matrix, Scalar};
use crate::train::{commit_bn_updates, map_row_chunks, shuffled_batches, History, TrainConfig};

pub use attention::{multi_head_attention, AttentionSpec};
pub use ffn::FfnSpec;

use attention::AttentionNet;
use ffn::FfnNet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassifierKind {
    Ffn,
    Attention,
    Gcn,
}

impl ClassifierKind {
    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Ffn => "ffn",
            ClassifierKind::Attention => "attn",
            ClassifierKind::Gcn => "gcn",
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ffn" => Ok(ClassifierKind::Ffn),
            "attn" | "attention" => Ok(ClassifierKind::Attention),
            "gcn" => Ok(ClassifierKind::Gcn),
            _ => Err(Error::Config(format!("unknown classifier kind {s:?}; expected ffn, attn or gcn"))),
        }
    }
}

/// Number of logits emitted for `num_classes` classes.
pub fn output_units(num_classes: usize) -> usize {
    if num_classes == 2 {
        1
    } else {
        num_classes
    }
}

/// Mean classification loss of raw logits, recorded on the tape.
pub(crate) fn classification_loss<T: Scalar>(
    tape: &mut GradientTape<T>,
    logits: Var,
    labels: &[usize],
    num_classes: usize,
) -> Result<Var> {
    if num_classes == 2 {
        tape.bce_with_logits(logits, labels)
    } else {
        tape.cross_entropy(logits, labels.to_vec())
    }
}

pub fn logits_loss(logits: &Matrix<f32>, labels: &[usize], num_classes: usize) -> Result<f64> {
    let kind = if num_classes == 2 {
        LossKind::BinaryCrossEntropy
    } else {
        LossKind::CrossEntropy
    };
    Ok(ops::loss(kind, logits, Target::Labels(labels))? as f64)
}

/// Row-normalized class probabilities (`n×num_classes`).
pub fn probabilities(logits: &Matrix<f32>, num_classes: usize) -> Matrix<f32> {
    if num_classes == 2 && logits.cols() == 1 {
        let data = logits
            .as_slice()
            .iter()
            .flat_map(|&z| {
                let p = sigmoid(z);
                [1.0 - p, p]
            })
            .collect();
        Matrix::from_vec(logits.rows(), 2, data).expect("binary probabilities")
    } else {
        softmax_rows(logits)
    }
}

/// Argmax of each logit row; ties go to the lowest class index. A single
/// logit predicts class 1 only when strictly positive.
pub fn argmax_labels(logits: &Matrix<f32>) -> Vec<usize> {
    if logits.cols() == 1 {
        return logits.as_slice().iter().map(|&z| usize::from(z > 0.0)).collect();
    }
    logits
        .iter_rows()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub labels: Vec<usize>,
    pub probabilities: Matrix<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ClassifierSpec {
    Ffn(FfnSpec),
    Attention(AttentionSpec),
}

impl ClassifierSpec {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            ClassifierSpec::Ffn(_) => ClassifierKind::Ffn,
            ClassifierSpec::Attention(_) => ClassifierKind::Attention,
        }
    }

    pub fn input_width(&self) -> usize {
        match self {
            ClassifierSpec::Ffn(s) => s.input_width,
            ClassifierSpec::Attention(s) => s.token_count,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            ClassifierSpec::Ffn(s) => s.num_classes,
            ClassifierSpec::Attention(s) => s.num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ClassifierSpec::Ffn(s) => s.validate(),
            ClassifierSpec::Attention(s) => s.validate(),
        }
    }

    pub fn to_json(&self) -> String {
        match self {
            ClassifierSpec::Ffn(s) => serde_json::to_string(s),
            ClassifierSpec::Attention(s) => serde_json::to_string(s),
        }
        .expect("spec serializes")
    }

    pub fn from_json(kind: ClassifierKind, json: &str) -> Result<Self> {
        let err = |e: serde_json::Error| Error::Input(format!("invalid {kind} spec: {e}"));
        match kind {
            ClassifierKind::Ffn => Ok(ClassifierSpec::Ffn(serde_json::from_str(json).map_err(err)?)),
            ClassifierKind::Attention => Ok(ClassifierSpec::Attention(serde_json::from_str(json).map_err(err)?)),
            ClassifierKind::Gcn => Err(Error::Input("gcn is not a minibatch classifier".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Net {
    Ffn(FfnNet),
    Attention(AttentionNet),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub spec: ClassifierSpec,
    pub params: ParamSet<f32>,
    pub bn_stats: Vec<BnStats<f32>>,
    net: Net,
}

impl Classifier {
    pub fn new(spec: ClassifierSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamSet::new();
        let (net, bn_stats) = match &spec {
            ClassifierSpec::Ffn(s) => {
                let (net, stats) = FfnNet::new(s, &mut params, seed)?;
                (Net::Ffn(net), stats)
            }
            ClassifierSpec::Attention(s) => (Net::Attention(AttentionNet::new(s, &mut params, seed)?), Vec::new()),
        };
        Ok(Self {
            spec,
            params,
            bn_stats,
            net,
        })
    }

    pub fn from_parts(spec: ClassifierSpec, params: ParamSet<f32>, bn_stats: Vec<BnStats<f32>>) -> Result<Self> {
        let reference = Self::new(spec, 0)?;
        reference.params.check_layout(&params)?;
        if bn_stats.len() != reference.bn_stats.len()
            || bn_stats
                .iter()
                .zip(&reference.bn_stats)
                .any(|(a, b)| a.running_mean.len() != b.running_mean.len())
        {
            return Err(Error::Input("batch-norm statistics do not match the classifier spec".into()));
        }
        Ok(Self {
            params,
            bn_stats,
            ..reference
        })
    }

    pub fn kind(&self) -> ClassifierKind {
        self.spec.kind()
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes()
    }

    pub fn input_width(&self) -> usize {
        self.spec.input_width()
    }

    /// Records the logits of `x` on `tape`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut GradientTape<T>,
        params: &ParamSet<T>,
        stats: &[BnStats<T>],
        x: Var,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.input_width() {
            return Err(Error::width(format!("{} classifier input", self.kind()), self.input_width(), cols));
        }
        match &self.net {
            Net::Ffn(n) => n.forward(tape, params, stats, x, ctx),
            Net::Attention(n) => n.forward(tape, params, x, ctx),
        }
    }

    /// Eval-mode logits.
    pub fn logits(&self, z: &Matrix<f32>) -> Result<Matrix<f32>> {
        if z.cols() != self.input_width() {
            return Err(Error::width(format!("{} classifier input", self.kind()), self.input_width(), z.cols()));
        }
        let chunk = match &self.net {
            Net::Ffn(_) => 4096,
            Net::Attention(n) => n.eval_chunk(),
        };
        map_row_chunks(z, chunk, output_units(self.num_classes()), |rows| {
            let mut tape = GradientTape::new();
            let x = tape.constant(rows);
            let out = self.forward(&mut tape, &self.params, &self.bn_stats, x, &mut ForwardCtx::eval())?;
            Ok(tape.take_value(out))
        })
    }

    pub fn predict(&self, z: &Matrix<f32>) -> Result<Prediction> {
        let logits = self.logits(z)?;
        Ok(Prediction {
            labels: argmax_labels(&logits),
            probabilities: probabilities(&logits, self.num_classes()),
        })
    }

    /// Per-sample, per-head attention weights (`L×L`). Attention models only.
    pub fn attention_weights(&self, z: &Matrix<f32>) -> Result<Vec<Vec<Matrix<f32>>>> {
        match &self.net {
            Net::Attention(n) => n.weights(&self.params, z),
            Net::Ffn(_) => Err(Error::Usage("attention weights requested from an ffn classifier".into())),
        }
    }

    /// Output of the residual attention block before pooling, `(n·L)×D`.
    pub fn attention_block(&self, z: &Matrix<f32>) -> Result<Matrix<f32>> {
        match &self.net {
            Net::Attention(n) => Ok(n.block_values(&self.params, z)?.block),
            Net::Ffn(_) => Err(Error::Usage("attention block requested from an ffn classifier".into())),
        }
    }

    pub fn fingerprint(&self) -> String {
        let mut f = Fingerprinter::new("classifier");
        f.str(self.kind().name()).str(&self.spec.to_json());
        self.params.fingerprint_into(&mut f);
        for s in &self.bn_stats {
            f.f32s(&s.running_mean).f32s(&s.running_var);
        }
        f.finish()
    }
}

/// Rows and labels borrowed from a dataset.
#[derive(Clone, Copy, Debug)]
pub struct LabeledView<'a> {
    pub x: &'a Matrix<f32>,
    pub labels: &'a [usize],
}

impl<'a> LabeledView<'a> {
    pub fn new(x: &'a Matrix<f32>, labels: &'a [usize]) -> Result<Self> {
        if x.rows() != labels.len() {
            return Err(Error::Input(format!(
                "{} rows but {} labels",
                x.rows(),
                labels.len()
            )));
        }
        Ok(Self { x, labels })
    }
}

#[derive(Clone, Debug)]
pub struct TrainedClassifier {
    pub model: Classifier,
    pub history: History,
    pub warnings: Vec<String>,
}

pub(crate) fn check_labels(labels: &[usize], num_classes: usize) -> Result<()> {
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
        return Err(Error::Input(format!(
            "label {l} at row {i} outside class range [0, {num_classes})"
        )));
    }
    Ok(())
}

pub(crate) fn absent_class_warnings(labels: &[usize], num_classes: usize) -> Vec<String> {
    let mut present = vec![false; num_classes];
    for &l in labels {
        present[l] = true;
    }
    present
        .iter()
        .enumerate()
        .filter(|(_, &p)| !p)
        .map(|(c, _)| format!("class {c} absent from the training split"))
        .collect()
}

/// Minibatch Adam training on `train`. When `test` is given its eval-mode
/// loss and accuracy are recorded after every epoch.
pub fn train_classifier(
    spec: ClassifierSpec,
    train: LabeledView<'_>,
    test: Option<LabeledView<'_>>,
    config: &TrainConfig,
) -> Result<TrainedClassifier> {
    config.validate()?;
    let c = spec.num_classes();
    check_labels(train.labels, c)?;
    if let Some(t) = &test {
        check_labels(t.labels, c)?;
    }
    if train.labels.len() < 2 {
        return Err(Error::Input(format!(
            "classifier training needs at least 2 rows, got {}",
            train.labels.len()
        )));
    }
    let warnings = absent_class_warnings(train.labels, c);
    let mut model = Classifier::new(spec, config.seed)?;
    if train.x.cols() != model.input_width() {
        return Err(Error::width("classifier training data", model.input_width(), train.x.cols()));
    }
    let momentum = match &model.spec {
        ClassifierSpec::Ffn(s) => s.bn_momentum,
        ClassifierSpec::Attention(_) => 0.0,
    };
    let mut adam = AdamState::new(&model.params);
    let mut shuffle = rng::stream(config.seed, "classifier/shuffle");
    let rows: Vec<usize> = (0..train.labels.len()).collect();
    let mut history = History::default();
    for epoch in 1..=config.epochs {
        let (mut total, mut hits, mut seen) = (0.0, 0usize, 0usize);
        for (b, idx) in shuffled_batches(&rows, config.batch_size, &mut shuffle).into_iter().enumerate() {
            let xb = train.x.select_rows(&idx);
            let yb: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let mut tape = GradientTape::new();
            let x = tape.constant(xb);
            let mut ctx = ForwardCtx::train(config.seed, &format!("classifier/dropout/{epoch}/{b}"));
            let logits = model.forward(&mut tape, &model.params, &model.bn_stats, x, &mut ctx)?;
            let loss = classification_loss(&mut tape, logits, &yb, c)?;
            let l = tape.value(loss)[(0, 0)] as f64;
            if !l.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite classifier loss at epoch {epoch}, batch {}",
                    b + 1
                )));
            }
            let pred = argmax_labels(tape.value(logits));
            hits += pred.iter().zip(&yb).filter(|(p, y)| p == y).count();
            let grads = tape.backward(loss, &model.params)?;
            adam_step(&mut model.params, &grads, &mut adam, config.lr)?;
            commit_bn_updates(&mut model.bn_stats, ctx.take_bn_updates(), momentum);
            total += l * idx.len() as f64;
            seen += idx.len();
        }
        history.push(epoch, "train", total / seen as f64, Some(hits as f64 / seen as f64));
        if let Some(t) = &test {
            if !t.labels.is_empty() {
                let logits = model.logits(t.x)?;
                let loss = logits_loss(&logits, t.labels, c)?;
                history.push(epoch, "test", loss, Some(accuracy(&argmax_labels(&logits), t.labels)?));
            }
        }
    }
    Ok(TrainedClassifier {
        model,
        history,
        warnings,
    })
}
