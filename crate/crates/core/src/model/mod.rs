//! End-to-end classifier: frontend → quantization → attention → aggregation
//! → affine layer, with a hand-composed backward pass and a named parameter
//! registry shared by the optimizer and the checkpoint format.

mod checkpoint;
mod config;
mod frontend;
mod loss;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use config::{AttentionKind, FrontendConfig, ModelConfig};
pub use frontend::{frontend_conv, ConvForward, FrontendConvOp, TemporalConv};
pub use loss::{cross_entropy, cross_entropy_grad};

use rand::Rng;

use crate::attention::{
    att_2da_backward, att_2da_forward, self_attention_backward, self_attention_forward,
    Att2DAForward, Att2DAMode, Att2DAParams, AttentionHead, Pass, SelfAttForward, SelfAttParams,
};
use crate::error::{Error, Result, StageExt};
use crate::nbof::{aggregate, aggregate_backward, init_codebook, quantize_backward, quantize_forward, Codebook, Quantized};
use crate::numerics::{DiffOp, Matrix};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub enum AttentionLayer {
    None,
    TwoD(Att2DAParams),
    SelfAttention(SelfAttParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    /// `classes × width`.
    pub weight: Matrix,
    /// `classes × 1`.
    pub bias: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    pub frontend: Option<TemporalConv>,
    pub codebook: Codebook,
    pub attention: AttentionLayer,
    pub classifier: Classifier,
}

enum AttTrace {
    None,
    TwoD(Att2DAForward),
    SelfAttention(SelfAttForward),
}

/// Every intermediate of one forward pass.
pub struct ForwardTrace {
    input: Matrix,
    frontend: Option<ConvForward>,
    input_attention: Option<Att2DAForward>,
    /// Input to the quantizer (`D'×N`).
    features: Matrix,
    quantized: Quantized,
    attention: AttTrace,
    attended: Matrix,
    pub histogram: Matrix,
    pub logits: Matrix,
}

impl ForwardTrace {
    pub fn phi(&self) -> &Matrix {
        &self.quantized.phi
    }

    /// Attention matrices in the order they are exported: one per head for the
    /// self-attention variants, a single oriented matrix for 2DA.
    pub fn attention_matrices(&self) -> Vec<Matrix> {
        if let Some(a) = &self.input_attention {
            return vec![a.attention.clone()];
        }
        match &self.attention {
            AttTrace::None => vec![],
            AttTrace::TwoD(f) => vec![f.attention.clone()],
            AttTrace::SelfAttention(f) => f.heads.iter().map(|h| h.attention.clone()).collect(),
        }
    }
}

impl Model {
    /// Initializes every parameter from `config.seed`; the codebook is drawn
    /// from the (frontend-transformed) columns of `samples`.
    pub fn new(config: ModelConfig, samples: &[Matrix]) -> Result<Model> {
        config.validate()?;
        let mut r = rng::seeded(config.seed);
        let frontend = match config.frontend {
            FrontendConfig::None => None,
            FrontendConfig::TemporalConv { width, channels } => {
                Some(TemporalConv::init(config.input_dim, channels, width, &mut r)?)
            }
        };
        let features: Vec<Matrix> = match &frontend {
            None => samples.to_vec(),
            Some(conv) => samples
                .iter()
                .map(|x| conv.forward(x).map(|f| f.output))
                .collect::<Result<_>>()
                .stage("frontend")?,
        };
        let codebook = init_codebook(&features, config.codewords, rng::derive(config.seed, 1))
            .stage("codebook init")?;
        if codebook.dim() != config.feature_dim() {
            return Err(Error::shape(
                "codebook init",
                (config.codewords, config.feature_dim()),
                codebook.v.shape(),
            ));
        }

        let attention = match config.attention {
            AttentionKind::None => AttentionLayer::None,
            AttentionKind::TwoD(mode) => {
                let size = match mode {
                    Att2DAMode::Input => config.feature_dim(),
                    Att2DAMode::Codeword => config.codewords,
                    Att2DAMode::Temporal => config.seq_len,
                };
                AttentionLayer::TwoD(Att2DAParams::init(size, mode, &mut r)?)
            }
            AttentionKind::SelfAttention(variant) => AttentionLayer::SelfAttention(SelfAttParams::init(
                variant,
                config.codewords,
                config.seq_len,
                config.latent_dim,
                config.heads,
                config.dropout,
                &mut r,
            )?),
        };

        let width = config.classifier_width();
        let classifier = Classifier {
            weight: rng::uniform_matrix(&mut r, config.classes, width, 1.0 / (width as f64).sqrt()),
            bias: Matrix::zeros(config.classes, 1),
        };

        Ok(Model {
            config,
            frontend,
            codebook,
            attention,
            classifier,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn forward(&self, x: &Matrix, pass: Pass) -> Result<ForwardTrace> {
        if x.rows() != self.config.input_dim {
            return Err(Error::shape("input", x.shape(), (self.config.input_dim, x.cols())).at_stage("input"));
        }
        if x.cols() == 0 {
            return Err(Error::EmptySequence("input has no timestamps").at_stage("input"));
        }
        let frontend = match &self.frontend {
            None => None,
            Some(conv) => Some(conv.forward(x).stage("frontend")?),
        };
        let mut features = frontend.as_ref().map_or_else(|| x.clone(), |f| f.output.clone());

        let input_attention = match &self.attention {
            AttentionLayer::TwoD(p) if p.mode == Att2DAMode::Input => {
                let f = att_2da_forward(&features, p).stage("input attention")?;
                features = f.output.clone();
                Some(f)
            }
            _ => None,
        };

        let quantized = quantize_forward(&features, &self.codebook).stage("quantize")?;
        let phi = &quantized.phi;
        let (attention, attended) = match &self.attention {
            AttentionLayer::TwoD(p) if p.mode != Att2DAMode::Input => {
                let f = att_2da_forward(phi, p).stage("attention")?;
                let out = f.output.clone();
                (AttTrace::TwoD(f), out)
            }
            AttentionLayer::SelfAttention(p) => {
                let f = self_attention_forward(phi, p, pass).stage("attention")?;
                let out = f.output.clone();
                (AttTrace::SelfAttention(f), out)
            }
            _ => (AttTrace::None, phi.clone()),
        };

        let histogram = aggregate(&attended).stage("aggregate")?;
        let mut logits = self.classifier.weight.matmul(&histogram).stage("classifier")?;
        logits.add_assign(&self.classifier.bias);
        Ok(ForwardTrace {
            input: x.clone(),
            frontend,
            input_attention,
            features,
            quantized,
            attention,
            attended,
            histogram,
            logits,
        })
    }

    /// Eval-mode logits.
    pub fn logits(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.forward(x, Pass::Eval)?.logits.into_data())
    }

    /// Eval-mode arg-max class.
    pub fn predict(&self, x: &Matrix) -> Result<usize> {
        let z = self.logits(x)?;
        Ok(z
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, v)| if *v > best.1 { (i, *v) } else { best })
            .0)
    }

    pub fn loss(&self, x: &Matrix, label: usize, pass: Pass) -> Result<f64> {
        cross_entropy(&self.forward(x, pass)?.logits, label).stage("loss")
    }

    /// Loss and parameter gradients, ordered like [`Model::parameters`].
    pub fn loss_and_grad(&self, x: &Matrix, label: usize, pass: Pass) -> Result<(f64, Vec<Matrix>)> {
        let trace = self.forward(x, pass)?;
        let loss = cross_entropy(&trace.logits, label).stage("loss")?;
        let g_logits = cross_entropy_grad(&trace.logits, label)?;
        Ok((loss, self.backward(&trace, &g_logits)?))
    }

    /// Back-propagates a logit cotangent through a recorded forward pass.
    pub fn backward(&self, trace: &ForwardTrace, g_logits: &Matrix) -> Result<Vec<Matrix>> {
        let g_weight = g_logits.matmul_t(&trace.histogram)?;
        let g_bias = g_logits.clone();
        let g_hist = self.classifier.weight.t_matmul(g_logits)?;
        let g_attended = aggregate_backward(trace.attended.cols(), &g_hist);

        let mut att_grads: Vec<Matrix> = Vec::new();
        let g_phi = match (&self.attention, &trace.attention) {
            (AttentionLayer::TwoD(p), AttTrace::TwoD(f)) => {
                let g = att_2da_backward(p, f, &g_attended).stage("attention backward")?;
                att_grads.extend([g.w, Matrix::scalar(g.alpha_raw)]);
                g.phi
            }
            (AttentionLayer::SelfAttention(p), AttTrace::SelfAttention(f)) => {
                let g = self_attention_backward(&trace.quantized.phi, p, f, &g_attended)
                    .stage("attention backward")?;
                for h in g.heads {
                    att_grads.extend([h.wq, h.wk, Matrix::scalar(h.alpha_raw)]);
                }
                g.phi
            }
            _ => g_attended,
        };

        let gq = quantize_backward(&trace.features, &self.codebook, &trace.quantized, &g_phi)
            .stage("quantize backward")?;
        let mut g_features = gq.x;
        if let (AttentionLayer::TwoD(p), Some(f)) = (&self.attention, &trace.input_attention) {
            let g = att_2da_backward(p, f, &g_features).stage("input attention backward")?;
            att_grads.extend([g.w, Matrix::scalar(g.alpha_raw)]);
            g_features = g.phi;
        }

        let mut grads = Vec::new();
        if let (Some(conv), Some(f)) = (&self.frontend, &trace.frontend) {
            let g = conv.backward(&trace.input, f, &g_features).stage("frontend backward")?;
            grads.extend([g.kernel, g.bias]);
        }
        grads.extend([gq.v, gq.w_raw]);
        grads.extend(att_grads);
        grads.extend([g_weight, g_bias]);
        Ok(grads)
    }

    /// Stable parameter names, in registry order.
    pub fn parameter_names(&self) -> Vec<String> {
        self.parameters().into_iter().map(|(n, _)| n).collect()
    }

    /// `(name, value)` for every learnable matrix, in registry order.
    pub fn parameters(&self) -> Vec<(String, Matrix)> {
        let mut out = Vec::new();
        if let Some(conv) = &self.frontend {
            out.push(("frontend.kernel".to_string(), conv.kernel.clone()));
            out.push(("frontend.bias".to_string(), conv.bias.clone()));
        }
        out.push(("codebook.v".to_string(), self.codebook.v.clone()));
        out.push(("codebook.w_raw".to_string(), self.codebook.w_raw.clone()));
        match &self.attention {
            AttentionLayer::None => {}
            AttentionLayer::TwoD(p) => {
                out.push(("att.W".to_string(), p.w.clone()));
                out.push(("att.alpha_raw".to_string(), Matrix::scalar(p.alpha_raw)));
            }
            AttentionLayer::SelfAttention(p) => {
                for (i, h) in p.heads.iter().enumerate() {
                    out.push((format!("att.head{i}.Wq"), h.wq.clone()));
                    out.push((format!("att.head{i}.Wk"), h.wk.clone()));
                    out.push((format!("att.head{i}.alpha_raw"), Matrix::scalar(h.alpha_raw)));
                }
            }
        }
        out.push(("classifier.weight".to_string(), self.classifier.weight.clone()));
        out.push(("classifier.bias".to_string(), self.classifier.bias.clone()));
        out
    }

    pub fn parameter_values(&self) -> Vec<Matrix> {
        self.parameters().into_iter().map(|(_, v)| v).collect()
    }

    /// Overwrites every parameter; `values` must follow registry order and shapes.
    pub fn set_parameters(&mut self, values: &[Matrix]) -> Result<()> {
        let current = self.parameters();
        if values.len() != current.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter matrices, got {}",
                current.len(),
                values.len()
            )));
        }
        for ((name, cur), new) in current.iter().zip(values) {
            if cur.shape() != new.shape() {
                return Err(Error::InvalidArgument(format!(
                    "parameter {name}: expected shape {:?}, got {:?}",
                    cur.shape(),
                    new.shape()
                )));
            }
        }
        let mut it = values.iter().cloned();
        let mut next = || it.next().expect("length checked above");
        if let Some(conv) = &mut self.frontend {
            conv.kernel = next();
            conv.bias = next();
        }
        self.codebook.v = next();
        self.codebook.w_raw = next();
        match &mut self.attention {
            AttentionLayer::None => {}
            AttentionLayer::TwoD(p) => {
                p.w = next();
                p.alpha_raw = next().get(0, 0);
            }
            AttentionLayer::SelfAttention(p) => {
                for h in &mut p.heads {
                    h.wq = next();
                    h.wk = next();
                    h.alpha_raw = next().get(0, 0);
                }
            }
        }
        self.classifier.weight = next();
        self.classifier.bias = next();
        Ok(())
    }

    /// Restores constrained entries after an unconstrained update (the 2DA diagonal).
    pub fn enforce_constraints(&mut self) {
        if let AttentionLayer::TwoD(p) = &mut self.attention {
            p.enforce_diagonal();
        }
    }

    /// Mutable access to the attention heads, if any.
    pub fn heads_mut(&mut self) -> &mut [AttentionHead] {
        match &mut self.attention {
            AttentionLayer::SelfAttention(p) => &mut p.heads,
            _ => &mut [],
        }
    }

    /// Rebuilds a model from a config and registry-ordered parameter values.
    pub fn from_parameters(config: ModelConfig, values: &[Matrix]) -> Result<Model> {
        config.validate()?;
        let mut r = rng::seeded(0);
        let k = config.codewords;
        let dim = config.feature_dim();
        let frontend = match config.frontend {
            FrontendConfig::None => None,
            FrontendConfig::TemporalConv { width, channels } => {
                Some(TemporalConv::init(config.input_dim, channels, width, &mut r)?)
            }
        };
        let codebook = Codebook::new(Matrix::zeros(k, dim), Matrix::zeros(k, dim))?;
        let attention = match config.attention {
            AttentionKind::None => AttentionLayer::None,
            AttentionKind::TwoD(mode) => {
                let size = match mode {
                    Att2DAMode::Input => dim,
                    Att2DAMode::Codeword => k,
                    Att2DAMode::Temporal => config.seq_len,
                };
                AttentionLayer::TwoD(Att2DAParams::new(Matrix::zeros(size, size), 0.0, mode)?)
            }
            AttentionKind::SelfAttention(v) => AttentionLayer::SelfAttention(SelfAttParams::init(
                v,
                k,
                config.seq_len,
                config.latent_dim,
                config.heads,
                config.dropout,
                &mut r,
            )?),
        };
        let width = config.classifier_width();
        let classifier = Classifier {
            weight: Matrix::zeros(config.classes, width),
            bias: Matrix::zeros(config.classes, 1),
        };
        let mut m = Model {
            config,
            frontend,
            codebook,
            attention,
            classifier,
        };
        m.set_parameters(values)?;
        Ok(m)
    }
}

/// Mean cross-entropy of a fixed batch as a [`DiffOp`] over the model's
/// registry-ordered parameters (eval mode).
pub struct ModelLossOp {
    template: Model,
    items: Vec<(Matrix, usize)>,
}

impl ModelLossOp {
    pub fn new(template: Model, items: Vec<(Matrix, usize)>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::InvalidArgument("model loss needs at least one item".into()));
        }
        Ok(ModelLossOp { template, items })
    }

    fn with_params(&self, inputs: &[Matrix]) -> Result<Model> {
        let mut m = self.template.clone();
        m.set_parameters(inputs)?;
        Ok(m)
    }
}

impl DiffOp for ModelLossOp {
    fn name(&self) -> &str {
        "model_loss"
    }

    fn forward(&self, inputs: &[Matrix]) -> Result<Matrix> {
        let m = self.with_params(inputs)?;
        let mut total = 0.0;
        for (x, y) in &self.items {
            total += m.loss(x, *y, Pass::Eval)?;
        }
        Ok(Matrix::scalar(total / self.items.len() as f64))
    }

    fn vjp(&self, inputs: &[Matrix], _output: &Matrix, upstream: &Matrix) -> Result<Vec<Matrix>> {
        let m = self.with_params(inputs)?;
        let scale = upstream.get(0, 0) / self.items.len() as f64;
        let mut acc: Vec<Matrix> = inputs.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        for (x, y) in &self.items {
            let (_, grads) = m.loss_and_grad(x, *y, Pass::Eval)?;
            for (a, g) in acc.iter_mut().zip(&grads) {
                a.axpy(scale, g);
            }
        }
        Ok(acc)
    }
}

/// Random model with every parameter perturbed off its initialization, for
/// gradient checks: `α` values and 2DA weights away from their init points.
pub fn randomized_model(config: ModelConfig, samples: &[Matrix], seed: u64) -> Result<Model> {
    let mut m = Model::new(config, samples)?;
    let mut r = rng::seeded(seed);
    let mut values = Vec::new();
    for (name, mut v) in m.parameters() {
        if name.ends_with("alpha_raw") {
            v = Matrix::scalar(r.random_range(-1.5..1.5));
        } else {
            let (scale, jitter) = if name == "codebook.v" {
                (1.0, 0.1)
            } else if name == "codebook.w_raw" || name.ends_with(".bias") {
                (1.0, 0.5)
            } else {
                (2.0, 0.2)
            };
            for x in v.data_mut() {
                *x = *x * scale + r.random_range(-jitter..jitter);
            }
        }
        values.push(v);
    }
    m.set_parameters(&values)?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::SelfAttVariant;
    use crate::numerics::grad_check_seeded;

    fn samples(dim: usize, n: usize, count: usize, seed: u64) -> Vec<Matrix> {
        let mut r = rng::seeded(seed);
        (0..count).map(|_| rng::uniform_matrix(&mut r, dim, n, 2.0)).collect()
    }

    fn desk(attention: AttentionKind, heads: usize) -> ModelConfig {
        ModelConfig {
            codewords: 6,
            latent_dim: 5,
            heads,
            ..ModelConfig::desk(4, 8, 3, attention)
        }
    }

    #[test]
    fn registry_names_are_stable() {
        let m = Model::new(desk(AttentionKind::SelfAttention(SelfAttVariant::Temporal), 2), &samples(4, 8, 3, 1)).unwrap();
        assert_eq!(
            m.parameter_names(),
            [
                "codebook.v",
                "codebook.w_raw",
                "att.head0.Wq",
                "att.head0.Wk",
                "att.head0.alpha_raw",
                "att.head1.Wq",
                "att.head1.Wk",
                "att.head1.alpha_raw",
                "classifier.weight",
                "classifier.bias"
            ]
        );
        assert_eq!(m.classifier.weight.shape(), (3, 12));
    }

    #[test]
    fn plain_pipeline_ignores_sequence_length_for_constant_columns() {
        let m = Model::new(desk(AttentionKind::None, 1), &samples(4, 8, 3, 2)).unwrap();
        let col = [0.3, -1.0, 0.7, 1.2];
        let short = Matrix::from_fn(4, 3, |i, _| col[i]);
        let long = Matrix::from_fn(4, 17, |i, _| col[i]);
        let (a, b) = (m.logits(&short).unwrap(), m.logits(&long).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors_name_the_stage() {
        let m = Model::new(desk(AttentionKind::SelfAttention(SelfAttVariant::Codeword), 1), &samples(4, 8, 3, 3)).unwrap();
        let err = m.logits(&Matrix::zeros(4, 5)).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "attention", .. }), "{err}");
        let err = m.logits(&Matrix::zeros(3, 8)).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "input", .. }), "{err}");
    }

    #[test]
    fn set_parameters_rejects_wrong_shapes() {
        let mut m = Model::new(desk(AttentionKind::None, 1), &samples(4, 8, 3, 4)).unwrap();
        let mut v = m.parameter_values();
        v[0] = Matrix::zeros(1, 1);
        assert!(m.set_parameters(&v).is_err());
        assert!(m.set_parameters(&v[1..]).is_err());
    }

    #[test]
    fn from_parameters_reproduces_the_model() {
        let mut cfg = desk(AttentionKind::TwoD(Att2DAMode::Input), 1);
        cfg.frontend = FrontendConfig::TemporalConv { width: 3, channels: 5 };
        let m = Model::new(cfg.clone(), &samples(4, 8, 3, 5)).unwrap();
        let rebuilt = Model::from_parameters(cfg, &m.parameter_values()).unwrap();
        assert_eq!(rebuilt, m);
    }

    #[test]
    fn end_to_end_gradients_for_every_variant() {
        let data = samples(4, 8, 3, 6);
        for kind in AttentionKind::ALL {
            for heads in [1, 2] {
                let mut cfg = desk(kind, heads);
                cfg.seed = 11;
                let m = randomized_model(cfg, &data, 12).unwrap();
                let items = vec![(data[0].clone(), 0), (data[1].clone(), 2)];
                let point = m.parameter_values();
                let op = ModelLossOp::new(m, items).unwrap();
                let rep = grad_check_seeded(&op, &point, 1e-5, 3).unwrap();
                assert!(rep.passed(1e-4), "{kind} h={heads}: {rep:?}");
            }
        }
    }

    #[test]
    fn frontend_gradients() {
        let data = samples(4, 8, 3, 7);
        let mut cfg = desk(AttentionKind::SelfAttention(SelfAttVariant::CodewordTemporal), 2);
        cfg.frontend = FrontendConfig::TemporalConv { width: 3, channels: 5 };
        let m = randomized_model(cfg, &data, 8).unwrap();
        let point = m.parameter_values();
        let op = ModelLossOp::new(m, vec![(data[2].clone(), 1)]).unwrap();
        let rep = grad_check_seeded(&op, &point, 1e-5, 4).unwrap();
        assert!(rep.passed(1e-4), "{rep:?}");
    }
}
