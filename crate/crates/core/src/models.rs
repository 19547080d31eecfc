//! The implicit generator `x = G_θ(z)` and the ratio / discriminator network.
//!
//! Both are plain multilayer perceptrons evaluated on the autodiff tape.
//! Weights are Glorot-uniform, `U(±√(6/(fan_in+fan_out)))`, biases start at
//! zero. The latent prior is a standard normal of dimension `latent_dim`.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Binding, Graph, ParamSlice, ParamVector, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::prob::{SampleBatch, Source};
use crate::rng::RngState;

/// Lower clamp bound for discriminator outputs.
pub const D_MIN: f64 = 1e-7;
/// Upper clamp bound for discriminator outputs.
pub const D_MAX: f64 = 1.0 - 1e-7;
/// Ratio bounds equivalent to the `D` clamp under `r = D/(1−D)`.
pub const R_MIN: f64 = D_MIN / (1.0 - D_MIN);
pub const R_MAX: f64 = 1.0 / R_MIN;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Sigmoid,
    Softplus,
}

impl Activation {
    fn apply(self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Tanh => g.tanh(x),
            Activation::Relu => g.relu(x),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Softplus => g.softplus(x),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Softplus => "softplus",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "identity" => Activation::Identity,
            "tanh" => Activation::Tanh,
            "relu" => Activation::Relu,
            "sigmoid" => Activation::Sigmoid,
            "softplus" => Activation::Softplus,
            other => return Err(Error::Usage(format!("unknown activation `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layer {
    pub width: usize,
    pub activation: Activation,
}

impl Layer {
    pub fn new(width: usize, activation: Activation) -> Self {
        Self { width, activation }
    }
}

/// Fully connected network; layer `k` owns slices `layer{k}.w` (`in × out`)
/// and `layer{k}.b` (`1 × out`).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    input_dim: usize,
    layers: Vec<Layer>,
    pub params: ParamVector,
}

impl Mlp {
    pub fn new(input_dim: usize, layers: Vec<Layer>, rng: &mut RngState) -> Result<Self> {
        if input_dim == 0 || layers.is_empty() || layers.iter().any(|l| l.width == 0) {
            return Err(Error::Usage("network needs input_dim >= 1 and non-empty layers".into()));
        }
        let mut shapes = Vec::new();
        let mut fan_in = input_dim;
        for (k, l) in layers.iter().enumerate() {
            shapes.push((format!("layer{k}.w"), fan_in, l.width));
            shapes.push((format!("layer{k}.b"), 1, l.width));
            fan_in = l.width;
        }
        let mut params = ParamVector::zeros(shapes);
        for k in 0..layers.len() {
            let s = &params.layout()[2 * k];
            let bound = (6.0 / (s.rows + s.cols) as f64).sqrt();
            for w in params.slice_mut(2 * k) {
                *w = rng.uniform_range(-bound, bound);
            }
        }
        Ok(Self {
            input_dim,
            layers,
            params,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.width)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Records the forward pass of `x` (`n × input_dim`) on `g`.
    pub fn forward(&self, g: &mut Graph, b: Binding, x: Var) -> Result<Var> {
        let (_, cols) = g.value(x).shape();
        if cols != self.input_dim {
            return Err(Error::Dimension {
                expected: self.input_dim,
                got: cols,
            });
        }
        let mut h = x;
        for (k, l) in self.layers.iter().enumerate() {
            let w = g.slot(b, 2 * k);
            let bias = g.slot(b, 2 * k + 1);
            let z = g.matmul(h, w)?;
            let z = g.add(z, bias)?;
            h = l.activation.apply(g, z)?;
        }
        Ok(h)
    }

    /// Forward pass without keeping the tape.
    pub fn eval(&self, x: &Matrix) -> Result<Matrix> {
        let mut g = Graph::new();
        let b = g.bind(&self.params);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, b, xv)?;
        Ok(g.value(out).clone())
    }

    fn describe_layers(&self) -> String {
        self.layers
            .iter()
            .map(|l| format!("{}:{}", l.width, l.activation.name()))
            .collect::<Vec<_>>()
            .join(",")
    }
}

fn hidden_layers(hidden: &[usize], activation: Activation) -> Vec<Layer> {
    hidden.iter().map(|&w| Layer::new(w, activation)).collect()
}

/// Implicit generator `G_θ: ℝ^m → ℝ^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorNet {
    pub mlp: Mlp,
}

impl GeneratorNet {
    /// `latent_dim → hidden (tanh) → data_dim (identity)`.
    pub fn new(latent_dim: usize, hidden: &[usize], data_dim: usize, rng: &mut RngState) -> Result<Self> {
        let mut layers = hidden_layers(hidden, Activation::Tanh);
        layers.push(Layer::new(data_dim, Activation::Identity));
        Ok(Self {
            mlp: Mlp::new(latent_dim, layers, rng)?,
        })
    }

    /// Default desk-scale generator: `2 → [32, 32] → 2`, tanh hidden units.
    pub fn desk_default(rng: &mut RngState) -> Self {
        Self::new(2, &[32, 32], 2, rng).expect("static architecture")
    }

    pub fn from_mlp(mlp: Mlp) -> Self {
        Self { mlp }
    }

    pub fn latent_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn data_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn params(&self) -> &ParamVector {
        &self.mlp.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.mlp.params
    }

    /// Standard normal latent draws.
    pub fn sample_latent(&self, n: usize, rng: &mut RngState) -> Result<SampleBatch> {
        let m = self.latent_dim();
        let data = (0..n * m).map(|_| rng.normal()).collect();
        SampleBatch::new(Matrix::from_vec(n, m, data)?, Source::Latent, rng.seed())
    }

    pub fn forward(&self, g: &mut Graph, b: Binding, z: Var) -> Result<Var> {
        self.mlp.forward(g, b, z)
    }

    /// Rows `G_θ(z_i)`.
    pub fn generate(&self, z: &SampleBatch) -> Result<SampleBatch> {
        SampleBatch::new(self.mlp.eval(&z.points)?, Source::Generated, z.seed_trace)
    }
}

/// Output head of a [`RatioNet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// `D = sigmoid(a) ∈ (0, 1)`; the pre-activation is the logit `log r`.
    Probability,
    /// `r = softplus(a) > 0`.
    Positive,
    /// `t = a ∈ ℝ`. Read as a ratio, `a` is taken to be `log r`.
    Unconstrained,
}

impl Head {
    fn name(self) -> &'static str {
        match self {
            Head::Probability => "probability",
            Head::Positive => "positive",
            Head::Unconstrained => "unconstrained",
        }
    }
}

impl FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "probability" => Head::Probability,
            "positive" => Head::Positive,
            "unconstrained" => Head::Unconstrained,
            other => return Err(Error::Usage(format!("unknown head `{other}`"))),
        })
    }
}

/// Ratio / discriminator network `ℝ^d → ℝ` with a selectable head.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioNet {
    pub mlp: Mlp,
    pub head: Head,
}

/// Pre-head output of a [`RatioNet`] on the tape, with the conversions
/// between discriminator, ratio and log-ratio views.
#[derive(Debug, Clone, Copy)]
pub struct RatioOutput {
    pub raw: Var,
    pub head: Head,
}

impl RatioOutput {
    /// Head output: `D`, `r` or `t` depending on the head.
    pub fn head_value(&self, g: &mut Graph) -> Result<Var> {
        match self.head {
            Head::Probability => self.disc(g),
            Head::Positive => self.ratio(g),
            Head::Unconstrained => Ok(self.raw),
        }
    }

    /// Discriminator value, clamped to `[D_MIN, D_MAX]`.
    pub fn disc(&self, g: &mut Graph) -> Result<Var> {
        match self.head {
            Head::Probability | Head::Unconstrained => {
                let d = g.sigmoid(self.raw)?;
                g.clamp(d, D_MIN, D_MAX)
            }
            Head::Positive => {
                let r = self.ratio(g)?;
                let denom = g.offset(r, 1.0)?;
                g.div(r, denom)
            }
        }
    }

    /// Density ratio, clamped to `[R_MIN, R_MAX]`.
    pub fn ratio(&self, g: &mut Graph) -> Result<Var> {
        match self.head {
            Head::Probability | Head::Unconstrained => {
                let l = self.log_ratio(g)?;
                g.exp(l)
            }
            Head::Positive => {
                let r = g.softplus(self.raw)?;
                g.clamp(r, R_MIN, R_MAX)
            }
        }
    }

    pub fn log_ratio(&self, g: &mut Graph) -> Result<Var> {
        match self.head {
            Head::Probability | Head::Unconstrained => g.clamp(self.raw, R_MIN.ln(), R_MAX.ln()),
            Head::Positive => {
                let r = self.ratio(g)?;
                g.log(r)
            }
        }
    }
}

impl RatioNet {
    /// `data_dim → hidden (tanh) → 1` with the given head.
    pub fn new(data_dim: usize, hidden: &[usize], head: Head, rng: &mut RngState) -> Result<Self> {
        let mut layers = hidden_layers(hidden, Activation::Tanh);
        layers.push(Layer::new(1, Activation::Identity));
        Ok(Self {
            mlp: Mlp::new(data_dim, layers, rng)?,
            head,
        })
    }

    /// Default desk-scale ratio net: `2 → [32, 32] → 1`.
    pub fn desk_default(head: Head, rng: &mut RngState) -> Self {
        Self::new(2, &[32, 32], head, rng).expect("static architecture")
    }

    pub fn data_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn params(&self) -> &ParamVector {
        &self.mlp.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.mlp.params
    }

    pub fn forward(&self, g: &mut Graph, b: Binding, x: Var) -> Result<RatioOutput> {
        Ok(RatioOutput {
            raw: self.mlp.forward(g, b, x)?,
            head: self.head,
        })
    }

    fn eval_with(&self, x: &Matrix, view: impl Fn(&RatioOutput, &mut Graph) -> Result<Var>) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let b = g.bind(&self.mlp.params);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, b, xv)?;
        let v = view(&out, &mut g)?;
        Ok(g.value(v).as_slice().to_vec())
    }

    pub fn eval_head(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.eval_with(x, |o, g| o.head_value(g))
    }

    pub fn eval_disc(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.eval_with(x, |o, g| o.disc(g))
    }

    pub fn eval_ratio(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.eval_with(x, |o, g| o.ratio(g))
    }

    pub fn eval_log_ratio(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.eval_with(x, |o, g| o.log_ratio(g))
    }
}

/// Counts clamp events in scalar conversions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClampCounter {
    pub count: u64,
}

impl ClampCounter {
    pub fn clamp_disc(&mut self, d: f64) -> f64 {
        if !(D_MIN..=D_MAX).contains(&d) {
            self.count += 1;
        }
        d.clamp(D_MIN, D_MAX)
    }
}

/// `r = D / (1 − D)`. `D` is clamped into `[D_MIN, D_MAX]` first.
pub fn disc_to_ratio(d: f64, counter: &mut ClampCounter) -> Result<f64> {
    if !(0.0..=1.0).contains(&d) {
        return Err(Error::Domain(format!("discriminator value {d} outside [0, 1]")));
    }
    let d = counter.clamp_disc(d);
    Ok(d / (1.0 - d))
}

/// `D = r / (r + 1)`.
pub fn ratio_to_disc(r: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::Usage(format!("ratio {r} must be >= 0")));
    }
    if r.is_infinite() {
        return Ok(1.0);
    }
    Ok(r / (r + 1.0))
}

const CHECKPOINT_MAGIC: &str = "ratiobench-checkpoint v1";

/// A network serialised to the versioned text checkpoint format.
///
/// ```text
/// ratiobench-checkpoint v1
/// kind ratio            # or: generator
/// input_dim 2
/// layers 32:tanh,32:tanh,1:identity
/// head probability      # ratio networks only
/// slices 6
/// layer0.w 2 32         # name rows cols, in storage order
/// ...
/// values 1153
/// <one f64 per line, shortest round-trip decimal>
/// ```
#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Generator(GeneratorNet),
    Ratio(RatioNet),
}

impl fmt::Display for Checkpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, mlp, head) = match self {
            Checkpoint::Generator(gn) => ("generator", &gn.mlp, None),
            Checkpoint::Ratio(rn) => ("ratio", &rn.mlp, Some(rn.head)),
        };
        writeln!(f, "{CHECKPOINT_MAGIC}")?;
        writeln!(f, "kind {kind}")?;
        writeln!(f, "input_dim {}", mlp.input_dim)?;
        writeln!(f, "layers {}", mlp.describe_layers())?;
        if let Some(h) = head {
            writeln!(f, "head {}", h.name())?;
        }
        writeln!(f, "slices {}", mlp.params.layout().len())?;
        for s in mlp.params.layout() {
            writeln!(f, "{} {} {}", s.name, s.rows, s.cols)?;
        }
        writeln!(f, "values {}", mlp.params.len())?;
        for v in mlp.params.values() {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

impl FromStr for Checkpoint {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let bad = |line: usize, message: String| Error::Config { line, message };
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| bad(0, format!("checkpoint truncated before {what}")))
        };
        let (ln, magic) = next("header")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(bad(ln, format!("unsupported checkpoint header `{magic}`")));
        }
        fn field<'a>(line: (usize, &'a str), key: &str) -> Result<&'a str> {
            line.1
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| Error::Config {
                    line: line.0,
                    message: format!("expected `{key} ...`"),
                })
        }
        fn num<T: FromStr>(line: usize, s: &str) -> Result<T> {
            s.parse().map_err(|_| Error::Config {
                line,
                message: format!("bad number `{s}`"),
            })
        }
        let kind_line = next("kind")?;
        let kind = field(kind_line, "kind")?.to_string();
        let dim_line = next("input_dim")?;
        let input_dim: usize = num(dim_line.0, field(dim_line, "input_dim")?)?;
        let layers_line = next("layers")?;
        let layers = field(layers_line, "layers")?
            .split(',')
            .map(|spec| {
                let (w, a) = spec.split_once(':').ok_or_else(|| bad(layers_line.0, format!("bad layer `{spec}`")))?;
                Ok(Layer::new(num(layers_line.0, w)?, a.parse()?))
            })
            .collect::<Result<Vec<_>>>()?;
        let head = if kind == "ratio" {
            let l = next("head")?;
            Some(field(l, "head")?.parse::<Head>()?)
        } else {
            None
        };
        let sl = next("slices")?;
        let n_slices: usize = num(sl.0, field(sl, "slices")?)?;
        let mut layout = Vec::with_capacity(n_slices);
        let mut offset = 0;
        for _ in 0..n_slices {
            let (ln, l) = next("slice")?;
            let parts: Vec<&str> = l.split_whitespace().collect();
            let [name, rows, cols] = parts.as_slice() else {
                return Err(bad(ln, format!("bad slice line `{l}`")));
            };
            let s = ParamSlice {
                name: name.to_string(),
                rows: num(ln, rows)?,
                cols: num(ln, cols)?,
                offset,
            };
            offset += s.len();
            layout.push(s);
        }
        let vl = next("values")?;
        let n_values: usize = num(vl.0, field(vl, "values")?)?;
        let mut values = Vec::with_capacity(n_values);
        for _ in 0..n_values {
            let (ln, l) = next("value")?;
            values.push(num::<f64>(ln, l)?);
        }
        let params = ParamVector::from_parts(layout, values)?;
        let mut rng = RngState::new(0);
        let mut mlp = Mlp::new(input_dim, layers, &mut rng)?;
        if !mlp.params.same_layout(&params) {
            return Err(bad(vl.0, "slice layout does not match the declared layers".into()));
        }
        mlp.params = params;
        match (kind.as_str(), head) {
            ("generator", _) => Ok(Checkpoint::Generator(GeneratorNet { mlp })),
            ("ratio", Some(head)) => Ok(Checkpoint::Ratio(RatioNet { mlp, head })),
            (other, _) => Err(bad(kind_line.0, format!("unknown checkpoint kind `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use approx::assert_relative_eq;

    #[test]
    fn identity_generator_reproduces_latent() {
        let mut rng = RngState::new(1);
        let mut gen = GeneratorNet::new(3, &[], 3, &mut rng).unwrap();
        let w = gen.params().index_of("layer0.w").unwrap();
        let slice = gen.params_mut().slice_mut(w);
        slice.fill(0.0);
        for i in 0..3 {
            slice[i * 3 + i] = 1.0;
        }
        let z = gen.sample_latent(20, &mut rng).unwrap();
        assert_eq!(gen.generate(&z).unwrap().points, z.points);
    }

    #[test]
    fn zero_final_layer_outputs_bias() {
        let mut rng = RngState::new(2);
        let mut gen = GeneratorNet::new(2, &[8], 2, &mut rng).unwrap();
        let p = gen.params_mut();
        p.slice_mut(2).fill(0.0);
        p.slice_mut(3).copy_from_slice(&[0.7, -1.5]);
        let out = gen.generate(&gen.sample_latent(10, &mut rng).unwrap()).unwrap();
        for row in out.points.iter_rows() {
            assert_eq!(row, &[0.7, -1.5]);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = {
            let mut rng = RngState::new(9);
            let g = GeneratorNet::desk_default(&mut rng);
            g.generate(&g.sample_latent(64, &mut rng).unwrap()).unwrap()
        };
        let b = {
            let mut rng = RngState::new(9);
            let g = GeneratorNet::desk_default(&mut rng);
            g.generate(&g.sample_latent(64, &mut rng).unwrap()).unwrap()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn generate_rejects_wrong_latent_dim() {
        let mut rng = RngState::new(2);
        let gen = GeneratorNet::new(2, &[4], 2, &mut rng).unwrap();
        let z = SampleBatch::new(Matrix::zeros(3, 5), Source::Latent, 0).unwrap();
        assert!(matches!(gen.generate(&z), Err(Error::Dimension { .. })));
    }

    #[test]
    fn disc_ratio_mapping() {
        let mut c = ClampCounter::default();
        assert_eq!(disc_to_ratio(0.5, &mut c).unwrap(), 1.0);
        assert_eq!(disc_to_ratio(0.75, &mut c).unwrap(), 3.0);
        assert_eq!(ratio_to_disc(1.0).unwrap(), 0.5);
        assert_eq!(ratio_to_disc(0.0).unwrap(), 0.0);
        assert_eq!(ratio_to_disc(3.0).unwrap(), 0.75);
        assert!(ratio_to_disc(-1.0).is_err());
        for k in 1..=9 {
            let d = k as f64 / 10.0;
            let back = ratio_to_disc(disc_to_ratio(d, &mut c).unwrap()).unwrap();
            assert!((back - d).abs() < 1e-12);
        }
        assert_eq!(c.count, 0);
        let r = disc_to_ratio(1.0, &mut c).unwrap();
        assert!(r.is_finite());
        assert_eq!(disc_to_ratio(0.0, &mut c).unwrap(), R_MIN);
        assert_eq!(c.count, 2);
        assert!(disc_to_ratio(1.5, &mut c).is_err());
    }

    #[test]
    fn ratio_roundtrip_over_wide_range() {
        let mut c = ClampCounter::default();
        for k in 0..=120 {
            let r = 10f64.powf(-6.0 + 12.0 * k as f64 / 120.0);
            let back = disc_to_ratio(ratio_to_disc(r).unwrap(), &mut c).unwrap();
            assert_relative_eq!(back, r, max_relative = 1e-9);
        }
    }

    #[test]
    fn head_ranges_hold() {
        // 10^6 inputs in chunks of 10^5.
        let mut rng = RngState::new(4);
        let nets = [
            RatioNet::desk_default(Head::Probability, &mut rng),
            RatioNet::desk_default(Head::Positive, &mut rng),
        ];
        for _ in 0..10 {
            let mut x = Matrix::zeros(100_000, 2);
            for v in x.as_mut_slice() {
                *v = 20.0 * rng.normal();
            }
            for net in &nets {
                let out = net.eval_head(&x).unwrap();
                match net.head {
                    Head::Probability => assert!(out.iter().all(|&d| d > 0.0 && d < 1.0)),
                    _ => assert!(out.iter().all(|&r| r > 0.0)),
                }
            }
        }
    }

    #[test]
    fn generator_is_pathwise_differentiable() {
        let mut rng = RngState::new(6);
        let gen = GeneratorNet::desk_default(&mut rng);
        let z = gen.sample_latent(16, &mut rng).unwrap().points;
        let check = finite_diff_check(
            |g, b| {
                let zv = g.constant(z.clone());
                let x = gen.forward(g, b, zv)?;
                g.mean(x)
            },
            gen.params(),
            1e-5,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-5, "{}", check.max_rel_error);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = RngState::new(8);
        let nets = [
            Checkpoint::Generator(GeneratorNet::desk_default(&mut rng)),
            Checkpoint::Ratio(RatioNet::desk_default(Head::Positive, &mut rng)),
        ];
        for ck in nets {
            let text = ck.to_string();
            let back: Checkpoint = text.parse().unwrap();
            assert_eq!(back, ck);
        }
        assert!("bogus".parse::<Checkpoint>().is_err());
    }
}
