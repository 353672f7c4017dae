//! Dense multilayer perceptrons, used as a direct one-step predictor or as
//! the block inside a four-stage residual network.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::net::{glorot_matrix, Block, Normalization, ParamSet, ResidualNet, Trainable};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Layers `weights[l]: widths[l+1] × widths[l]`. Every layer but the last
/// is followed by the activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vector>,
    pub activation: Activation,
}

impl MlpParams {
    pub fn zeros(widths: &[usize], activation: Activation) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid MLP widths {widths:?}")));
        }
        Ok(MlpParams {
            weights: widths.windows(2).map(|w| Matrix::zeros(w[1], w[0])).collect(),
            biases: widths[1..].iter().map(|&n| Vector::zeros(n)).collect(),
            activation,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(widths: &[usize], activation: Activation, rng: &mut SeededRng) -> Result<Self> {
        let mut m = MlpParams::zeros(widths, activation)?;
        for (w, pair) in m.weights.iter_mut().zip(widths.windows(2)) {
            *w = glorot_matrix(pair[1], pair[0], rng);
        }
        Ok(m)
    }

    /// `d → width × n_hidden → d`.
    pub fn square(d: usize, n_hidden: usize, width: usize, activation: Activation, rng: &mut SeededRng) -> Result<Self> {
        let mut widths = vec![d];
        widths.extend(std::iter::repeat_n(width, n_hidden));
        widths.push(d);
        MlpParams::init(&widths, activation, rng)
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.weights.iter().map(Matrix::rows));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.weights.first().map_or(0, Matrix::cols)
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().map_or(0, Matrix::rows)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() || self.weights.len() != self.biases.len() {
            return Err(Error::InvariantViolation("MLP needs one bias per weight layer".into()));
        }
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if w.rows() != b.dim() {
                return Err(Error::dim("MLP bias", w.rows(), b.dim()));
            }
            if l > 0 && w.cols() != self.weights[l - 1].rows() {
                return Err(Error::dim("MLP layer chaining", self.weights[l - 1].rows(), w.cols()));
            }
        }
        if !self.all_finite() {
            return Err(Error::NonFinite("MLP parameters".into()));
        }
        Ok(())
    }

    pub fn mlp_forward(&self, x: &Vector) -> Result<Vector> {
        if x.dim() != self.input_dim() {
            return Err(Error::dim("mlp_forward", self.input_dim(), x.dim()));
        }
        let mut cache = self.new_cache();
        let mut out = Vector::zeros(self.output_dim());
        self.forward_raw(x, &mut cache, &mut out);
        Ok(out)
    }

    /// Gradients of `upstream · mlp(x)` with respect to the parameters and `x`.
    pub fn mlp_backward(&self, x: &Vector, upstream: &Vector) -> Result<(MlpParams, Vector)> {
        if x.dim() != self.input_dim() {
            return Err(Error::dim("mlp_backward input", self.input_dim(), x.dim()));
        }
        if upstream.dim() != self.output_dim() {
            return Err(Error::dim("mlp_backward upstream", self.output_dim(), upstream.dim()));
        }
        let mut cache = self.new_cache();
        let mut out = Vector::zeros(self.output_dim());
        self.forward_raw(x, &mut cache, &mut out);
        let mut grad = self.zeroed();
        let mut dx = Vector::zeros(self.input_dim());
        self.backward_raw(&mut cache, upstream, &mut grad, &mut dx);
        Ok((grad, dx))
    }

    fn forward_raw(&self, x: &[f64], c: &mut MlpCache, out: &mut [f64]) {
        c.acts[0].copy_from_slice(x);
        let last = self.weights.len() - 1;
        for l in 0..=last {
            let (done, rest) = c.acts.split_at_mut(l + 1);
            let input = &done[l];
            let target: &mut [f64] = if l == last { &mut *out } else { &mut rest[0] };
            self.weights[l].affine_into(input, &self.biases[l], target);
            if l != last {
                for v in target.iter_mut() {
                    *v = self.activation.apply(*v);
                }
            }
        }
    }

    fn backward_raw(&self, c: &mut MlpCache, g: &[f64], grad: &mut MlpParams, dx: &mut [f64]) {
        let last = self.weights.len() - 1;
        c.delta[last].copy_from_slice(g);
        for l in (0..=last).rev() {
            grad.weights[l].add_outer(&c.delta[l], &c.acts[l]);
            for (b, v) in grad.biases[l].iter_mut().zip(&c.delta[l]) {
                *b += v;
            }
            if l == 0 {
                dx.fill(0.0);
                self.weights[0].tr_matvec_acc(&c.delta[0], dx);
            } else {
                let (lower, upper) = c.delta.split_at_mut(l);
                let below = &mut lower[l - 1];
                below.fill(0.0);
                self.weights[l].tr_matvec_acc(&upper[0], below);
                for (d, a) in below.iter_mut().zip(&c.acts[l]) {
                    *d *= self.activation.derivative_from_output(*a);
                }
            }
        }
    }
}

/// Activations per layer input, plus backpropagated errors per layer output.
#[derive(Debug, Clone)]
pub struct MlpCache {
    acts: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

impl ParamSet for MlpParams {
    fn tensors(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), &mut b[..]])
            .collect()
    }
}

impl Block for MlpParams {
    type Cache = MlpCache;

    fn dim(&self) -> usize {
        self.input_dim()
    }

    fn new_cache(&self) -> MlpCache {
        let widths = self.widths();
        MlpCache {
            acts: widths[..widths.len() - 1].iter().map(|&n| vec![0.0; n]).collect(),
            delta: widths[1..].iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn forward(&self, x: &[f64], cache: &mut MlpCache, out: &mut [f64]) {
        self.forward_raw(x, cache, out)
    }

    fn backward(&self, cache: &mut MlpCache, g: &[f64], grad: &mut Self, dx: &mut [f64]) {
        self.backward_raw(cache, g, grad, dx)
    }
}

/// Four-stage residual network with an MLP block.
pub type MlpSl4 = ResidualNet<MlpParams>;

/// Wraps an MLP as the shared block of a four-stage residual network.
pub fn make_mlp_sl4(mlp_block: MlpParams, dt: f64) -> Result<MlpSl4> {
    mlp_block.validate()?;
    if mlp_block.input_dim() != mlp_block.output_dim() {
        return Err(Error::dim("MLP residual block", mlp_block.input_dim(), mlp_block.output_dim()));
    }
    ResidualNet::new(mlp_block, 4, dt)
}

/// An MLP mapping the state straight to its successor, optionally in
/// standardized coordinates: `x' = mean + std ⊙ mlp((x - mean)/std)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpForecaster {
    pub mlp: MlpParams,
    pub norm: Option<Normalization>,
}

impl MlpForecaster {
    pub fn new(mlp: MlpParams, norm: Option<Normalization>) -> Result<Self> {
        let f = MlpForecaster { mlp, norm };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        self.mlp.validate()?;
        if self.mlp.input_dim() != self.mlp.output_dim() {
            return Err(Error::dim("direct MLP output", self.mlp.input_dim(), self.mlp.output_dim()));
        }
        if let Some(n) = &self.norm {
            n.validate()?;
            if n.dim() != self.mlp.input_dim() {
                return Err(Error::dim("direct MLP normalization", self.mlp.input_dim(), n.dim()));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn forward(&self, x: &Vector) -> Result<Vector> {
        if x.dim() != self.dim() {
            return Err(Error::dim("direct MLP forward", self.dim(), x.dim()));
        }
        let mut tape = self.new_tape();
        let y = Vector::from(self.forward_tape(x, &mut tape));
        if !y.is_finite() {
            return Err(Error::NonFinite("direct MLP forward".into()));
        }
        Ok(y)
    }
}

pub struct MlpTape {
    cache: MlpCache,
    z: Vec<f64>,
    out_z: Vec<f64>,
    out: Vec<f64>,
    g_z: Vec<f64>,
}

impl ParamSet for MlpForecaster {
    fn tensors(&self) -> Vec<&[f64]> {
        self.mlp.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.mlp.tensors_mut()
    }
}

impl Trainable for MlpForecaster {
    type Tape = MlpTape;

    fn input_dim(&self) -> usize {
        self.dim()
    }

    fn output_dim(&self) -> usize {
        self.dim()
    }

    fn new_tape(&self) -> MlpTape {
        let d = self.dim();
        MlpTape {
            cache: self.mlp.new_cache(),
            z: vec![0.0; d],
            out_z: vec![0.0; d],
            out: vec![0.0; d],
            g_z: vec![0.0; d],
        }
    }

    fn forward_tape<'t>(&self, x: &[f64], tape: &'t mut MlpTape) -> &'t [f64] {
        match &self.norm {
            Some(n) => n.to_standard(x, &mut tape.z),
            None => tape.z.copy_from_slice(x),
        }
        self.mlp.forward_raw(&tape.z, &mut tape.cache, &mut tape.out_z);
        match &self.norm {
            Some(n) => n.from_standard(&tape.out_z, &mut tape.out),
            None => tape.out.copy_from_slice(&tape.out_z),
        }
        &tape.out
    }

    fn backward_tape(&self, tape: &mut MlpTape, g_out: &[f64], grad: &mut Self, dx: &mut [f64]) {
        match &self.norm {
            Some(n) => {
                for ((g, go), s) in tape.g_z.iter_mut().zip(g_out).zip(n.std.iter()) {
                    *g = go * s;
                }
            }
            None => tape.g_z.copy_from_slice(g_out),
        }
        self.mlp.backward_raw(&mut tape.cache, &tape.g_z, &mut grad.mlp, dx);
        if let Some(n) = &self.norm {
            for (d, s) in dx.iter_mut().zip(n.std.iter()) {
                *d /= s;
            }
        }
    }

    fn loss_scale(&self) -> Option<&[f64]> {
        self.norm.as_ref().map(|n| n.std.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{rk4_step, FnField};
    use crate::training::{gradcheck_report, PairDataset};

    fn random_sample(d: usize, n: usize, seed: u64) -> PairDataset {
        let mut rng = SeededRng::new(seed);
        let inputs = (0..n).map(|_| (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
        let targets = (0..n).map(|_| (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
        PairDataset::new(inputs, targets, 0.1).unwrap()
    }

    fn with_random_biases(mut m: MlpParams, rng: &mut SeededRng) -> MlpParams {
        for b in &mut m.biases {
            for v in b.iter_mut() {
                *v = rng.uniform(-0.3, 0.3);
            }
        }
        m
    }

    #[test]
    fn zero_mlp_outputs_zero() {
        let m = MlpParams::zeros(&[3, 6, 6, 3], Activation::Tanh).unwrap();
        assert_eq!(m.mlp_forward(&Vector::from([1.0, -2.0, 3.0])).unwrap(), Vector::zeros(3));
        assert!(m.mlp_forward(&Vector::zeros(2)).is_err());
    }

    #[test]
    fn single_identity_layer_is_identity() {
        let mut m = MlpParams::zeros(&[3, 3], Activation::Relu).unwrap();
        m.weights[0] = Matrix::identity(3);
        let x = Vector::from([-1.0, 0.5, 2.0]);
        assert_eq!(m.mlp_forward(&x).unwrap(), x);
    }

    #[test]
    fn widths_and_validation() {
        let m = MlpParams::square(3, 5, 6, Activation::Tanh, &mut SeededRng::new(1)).unwrap();
        assert_eq!(m.widths(), vec![3, 6, 6, 6, 6, 6, 3]);
        assert!(m.validate().is_ok());
        let mut bad = m.clone();
        bad.weights[2] = Matrix::zeros(6, 5);
        assert!(bad.validate().is_err());
        assert!(MlpParams::zeros(&[3], Activation::Tanh).is_err());
    }

    #[test]
    fn gradcheck_direct_and_residual_mlps() {
        let mut rng = SeededRng::new(5);
        let sample = random_sample(3, 6, 9);
        for act in [Activation::Tanh, Activation::Relu] {
            let mlp = with_random_biases(MlpParams::square(3, 3, 6, act, &mut rng).unwrap(), &mut rng);
            let direct = MlpForecaster::new(mlp.clone(), None).unwrap();
            let r = gradcheck_report(&direct, &sample).unwrap();
            assert!(r.max_rel_error < 1e-5, "{act:?} direct: {r:?}");
            let sl4 = make_mlp_sl4(mlp, 0.1).unwrap();
            let r = gradcheck_report(&sl4, &sample).unwrap();
            assert!(r.max_rel_error < 1e-5, "{act:?} residual: {r:?}");
        }
        let norm = Normalization::new(Vector::from([0.1, 0.2, -0.3]), Vector::from([2.0, 0.5, 1.5])).unwrap();
        let mlp = with_random_biases(MlpParams::square(3, 2, 5, Activation::Tanh, &mut rng).unwrap(), &mut rng);
        let direct = MlpForecaster::new(mlp, Some(norm)).unwrap();
        let r = gradcheck_report(&direct, &sample).unwrap();
        assert!(r.max_rel_error < 1e-5, "normalized direct: {r:?}");
    }

    #[test]
    fn mlp_backward_matches_block_gradient_of_linear_functional() {
        let mut rng = SeededRng::new(6);
        let m = with_random_biases(MlpParams::square(2, 2, 4, Activation::Tanh, &mut rng).unwrap(), &mut rng);
        let x = Vector::from([0.3, -0.8]);
        let up = Vector::from([1.0, 0.0]);
        let (_, dx) = m.mlp_backward(&x, &up).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (m.mlp_forward(&xp).unwrap()[0] - m.mlp_forward(&xm).unwrap()[0]) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn residual_mlp_examples() {
        let zero = make_mlp_sl4(MlpParams::zeros(&[3, 6, 3], Activation::Tanh).unwrap(), 0.01).unwrap();
        let x = Vector::from([1.0, 2.0, 3.0]);
        assert_eq!(zero.forward(&x).unwrap(), x);

        let mut rng = SeededRng::new(7);
        let mlp = with_random_biases(MlpParams::square(3, 2, 6, Activation::Tanh, &mut rng).unwrap(), &mut rng);
        let net = make_mlp_sl4(mlp.clone(), 0.05).unwrap();
        let field = FnField::new(3, |x: &[f64], dx: &mut [f64]| {
            let y = mlp.mlp_forward(&Vector::from(x)).unwrap();
            dx.copy_from_slice(&y);
        });
        let a = net.forward(&x).unwrap();
        let b = rk4_step(&field, &x, 0.05).unwrap();
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() <= 1e-12);
        }
        assert!(make_mlp_sl4(MlpParams::zeros(&[3, 4, 2], Activation::Tanh).unwrap(), 0.1).is_err());
    }
}
