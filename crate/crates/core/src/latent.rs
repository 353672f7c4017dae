//! Latent low-dimensional dynamics observed through a linear map.
//!
//! Observations are `y = H·x` with `H: D × d`, `D > d`. The model encodes an
//! observation to the latent space, runs the Runge-Kutta combination of a
//! bilinear block there, and decodes the latent increment:
//!
//! ```text
//! y' = y + dt·(Dec·inc(Enc·y + b_enc) + b_dec)
//! ```
//!
//! Since `dy/dt = H·f(x)`, the observation increment is a linear image of the
//! latent field, which is why the skip connection lives in observation space.

use serde::{Deserialize, Serialize};

use crate::dynamics::{generate_dataset, DatasetSpec, OdeSystem, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::{format_sig17, ridge_least_squares, smallest_singular_value, Matrix, Vector};
use crate::net::{
    glorot_matrix, rk_increment_backward, rk_increment_forward, BiNNModel, BlockCache, BlockParams,
    Normalization, ParamSet, RkTape, Trainable,
};
use crate::rng::SeededRng;
use crate::training::{make_pairs, one_step_rmse, train, PairDataset, TrainConfig, TrainHistory};

/// Redraw threshold on the smallest singular value of a random `H`.
pub const MIN_SINGULAR_VALUE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentObservationMap {
    pub h: Matrix,
}

impl LatentObservationMap {
    pub fn new(h: Matrix) -> Result<Self> {
        if h.rows() < h.cols() || h.cols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "observation map must be tall, got {} x {}",
                h.rows(),
                h.cols()
            )));
        }
        let smin = smallest_singular_value(&h)?;
        let scale = h.as_slice().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if !(smin > 1e-10 * scale.max(f64::MIN_POSITIVE)) {
            return Err(Error::RankDeficient(format!(
                "observation map is not of full column rank (smallest singular value {smin:.3e})"
            )));
        }
        Ok(LatentObservationMap { h })
    }

    /// Entries uniform in `[-1, 1]`, redrawn until the smallest singular value
    /// exceeds [`MIN_SINGULAR_VALUE`].
    pub fn random(obs_dim: usize, latent_dim: usize, rng: &mut SeededRng) -> Result<Self> {
        if obs_dim < latent_dim || latent_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "need 0 < latent dim <= observed dim, got {latent_dim} and {obs_dim}"
            )));
        }
        loop {
            let data = (0..obs_dim * latent_dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let h = Matrix::new(obs_dim, latent_dim, data)?;
            if smallest_singular_value(&h)? > MIN_SINGULAR_VALUE {
                return Ok(LatentObservationMap { h });
            }
        }
    }

    /// Identity on the first `latent_dim` rows, zero below.
    pub fn identity_padded(obs_dim: usize, latent_dim: usize) -> Result<Self> {
        let mut h = Matrix::zeros(obs_dim, latent_dim);
        for i in 0..latent_dim.min(obs_dim) {
            h[(i, i)] = 1.0;
        }
        LatentObservationMap::new(h)
    }

    pub fn obs_dim(&self) -> usize {
        self.h.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.h.cols()
    }
}

/// `Y_k = H·X_k` for every state.
pub fn synthesize_observations(latent: &Trajectory, map: &LatentObservationMap) -> Result<Trajectory> {
    if latent.dim() != map.latent_dim() {
        return Err(Error::dim("observation map columns", map.latent_dim(), latent.dim()));
    }
    let states = latent.states().iter().map(|x| map.h.matvec(x)).collect::<Result<Vec<_>>>()?;
    Trajectory::new(latent.t0(), latent.h(), states)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentModel {
    pub encoder: Matrix,
    pub encoder_bias: Vector,
    pub dynamics: BiNNModel,
    pub decoder: Matrix,
    pub decoder_bias: Vector,
    /// Optional standardization of the observations.
    pub norm: Option<Normalization>,
}

impl LatentModel {
    /// Glorot encoder/decoder and block, zero biases.
    pub fn init(obs_dim: usize, latent_dim: usize, n_blocks: usize, dt: f64, rng: &mut SeededRng) -> Result<Self> {
        if obs_dim == 0 || latent_dim == 0 {
            return Err(Error::InvalidArgument("latent model dimensions must be positive".into()));
        }
        let encoder = glorot_matrix(latent_dim, obs_dim, rng);
        let block = BlockParams::init(latent_dim, latent_dim, latent_dim, rng)?;
        let decoder = glorot_matrix(obs_dim, latent_dim, rng);
        let m = LatentModel {
            encoder,
            encoder_bias: Vector::zeros(latent_dim),
            dynamics: BiNNModel::new(block, n_blocks, dt)?,
            decoder,
            decoder_bias: Vector::zeros(obs_dim),
            norm: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_norm(mut self, norm: Option<Normalization>) -> Result<Self> {
        self.norm = norm;
        self.validate()?;
        Ok(self)
    }

    pub fn obs_dim(&self) -> usize {
        self.encoder.cols()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.rows()
    }

    pub fn dt(&self) -> f64 {
        self.dynamics.dt
    }

    pub fn validate(&self) -> Result<()> {
        let (big, small) = (self.obs_dim(), self.latent_dim());
        let checks = [
            ("latent encoder bias", small, self.encoder_bias.dim()),
            ("latent dynamics dim", small, self.dynamics.dim()),
            ("latent decoder rows", big, self.decoder.rows()),
            ("latent decoder columns", small, self.decoder.cols()),
            ("latent decoder bias", big, self.decoder_bias.dim()),
        ];
        for (what, expected, got) in checks {
            if expected != got {
                return Err(Error::dim(what, expected, got));
            }
        }
        if self.dynamics.norm.is_some() {
            return Err(Error::InvariantViolation(
                "latent dynamics must not carry their own normalization".into(),
            ));
        }
        self.dynamics.validate()?;
        if let Some(n) = &self.norm {
            n.validate()?;
            if n.dim() != big {
                return Err(Error::dim("latent observation normalization", big, n.dim()));
            }
        }
        if !self.all_finite() {
            return Err(Error::NonFinite("latent model parameters".into()));
        }
        Ok(())
    }

    /// Latent coordinates `Enc·y + b_enc` of an observation.
    pub fn encode(&self, y: &Vector) -> Result<Vector> {
        if y.dim() != self.obs_dim() {
            return Err(Error::dim("latent encode", self.obs_dim(), y.dim()));
        }
        let mut z = vec![0.0; y.dim()];
        match &self.norm {
            Some(n) => n.to_standard(y, &mut z),
            None => z.copy_from_slice(y),
        }
        let mut u = Vector::zeros(self.latent_dim());
        self.encoder.affine_into(&z, &self.encoder_bias, &mut u);
        Ok(u)
    }
}

/// One observation-space step of the latent model.
pub fn latent_forward(model: &LatentModel, y: &Vector) -> Result<Vector> {
    if y.dim() != model.obs_dim() {
        return Err(Error::dim("latent_forward", model.obs_dim(), y.dim()));
    }
    let mut tape = model.new_tape();
    let out = Vector::from(model.forward_tape(y, &mut tape));
    if !out.is_finite() {
        return Err(Error::NonFinite("latent_forward".into()));
    }
    Ok(out)
}

pub struct LatentTape {
    z: Vec<f64>,
    u: Vec<f64>,
    rk: RkTape<BlockCache>,
    out_z: Vec<f64>,
    out: Vec<f64>,
    g_z: Vec<f64>,
    g_dec: Vec<f64>,
    g_inc: Vec<f64>,
    du: Vec<f64>,
}

impl ParamSet for LatentModel {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = vec![self.encoder.as_slice(), self.encoder_bias.as_slice()];
        t.extend(self.dynamics.tensors());
        t.push(self.decoder.as_slice());
        t.push(self.decoder_bias.as_slice());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t: Vec<&mut [f64]> = vec![self.encoder.as_mut_slice(), &mut self.encoder_bias[..]];
        t.extend(self.dynamics.tensors_mut());
        t.push(self.decoder.as_mut_slice());
        t.push(&mut self.decoder_bias[..]);
        t
    }
}

impl Trainable for LatentModel {
    type Tape = LatentTape;

    fn input_dim(&self) -> usize {
        self.obs_dim()
    }

    fn output_dim(&self) -> usize {
        self.obs_dim()
    }

    fn new_tape(&self) -> LatentTape {
        let (big, small) = (self.obs_dim(), self.latent_dim());
        LatentTape {
            z: vec![0.0; big],
            u: vec![0.0; small],
            rk: RkTape::new(&self.dynamics.block),
            out_z: vec![0.0; big],
            out: vec![0.0; big],
            g_z: vec![0.0; big],
            g_dec: vec![0.0; big],
            g_inc: vec![0.0; small],
            du: vec![0.0; small],
        }
    }

    fn forward_tape<'t>(&self, y: &[f64], tape: &'t mut LatentTape) -> &'t [f64] {
        match &self.norm {
            Some(n) => n.to_standard(y, &mut tape.z),
            None => tape.z.copy_from_slice(y),
        }
        self.encoder.affine_into(&tape.z, &self.encoder_bias, &mut tape.u);
        let dy = &self.dynamics;
        rk_increment_forward(&dy.block, dy.n_blocks, &dy.rk, dy.dt, &tape.u, &mut tape.rk);
        self.decoder.affine_into(tape.rk.increment(), &self.decoder_bias, &mut tape.out_z);
        for (o, z) in tape.out_z.iter_mut().zip(&tape.z) {
            *o = z + dy.dt * *o;
        }
        match &self.norm {
            Some(n) => n.from_standard(&tape.out_z, &mut tape.out),
            None => tape.out.copy_from_slice(&tape.out_z),
        }
        &tape.out
    }

    fn backward_tape(&self, tape: &mut LatentTape, g_out: &[f64], grad: &mut Self, dx: &mut [f64]) {
        match &self.norm {
            Some(n) => {
                for ((g, go), s) in tape.g_z.iter_mut().zip(g_out).zip(n.std.iter()) {
                    *g = go * s;
                }
            }
            None => tape.g_z.copy_from_slice(g_out),
        }
        let dy = &self.dynamics;
        for (gd, gz) in tape.g_dec.iter_mut().zip(&tape.g_z) {
            *gd = dy.dt * gz;
        }
        grad.decoder.add_outer(&tape.g_dec, tape.rk.increment());
        for (b, g) in grad.decoder_bias.iter_mut().zip(&tape.g_dec) {
            *b += g;
        }
        tape.g_inc.fill(0.0);
        self.decoder.tr_matvec_acc(&tape.g_dec, &mut tape.g_inc);
        tape.du.fill(0.0);
        let grad_rk = if dy.rk.trainable && dy.n_blocks == 4 {
            Some(&mut grad.dynamics.rk)
        } else {
            None
        };
        rk_increment_backward(
            &dy.block,
            dy.n_blocks,
            &dy.rk,
            dy.dt,
            &mut tape.rk,
            &tape.g_inc,
            &mut grad.dynamics.block,
            grad_rk,
            &mut tape.du,
        );
        grad.encoder.add_outer(&tape.du, &tape.z);
        for (b, g) in grad.encoder_bias.iter_mut().zip(&tape.du) {
            *b += g;
        }
        dx.copy_from_slice(&tape.g_z);
        self.encoder.tr_matvec_acc(&tape.du, dx);
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

/// Fits the latent model on one-step observation pairs.
pub fn train_latent(model: LatentModel, observed: &PairDataset, config: &TrainConfig) -> Result<(LatentModel, TrainHistory)> {
    model.validate()?;
    if observed.input_dim() != model.obs_dim() {
        return Err(Error::dim("latent training data", model.obs_dim(), observed.input_dim()));
    }
    let tol = 1e-9 * model.dt().abs().max(observed.h().abs());
    if (observed.h() - model.dt()).abs() > tol {
        return Err(Error::InvalidArgument(format!(
            "data step {} does not match model dt {}",
            observed.h(),
            model.dt()
        )));
    }
    train(model, observed, config)
}

/// Affine map taking a learned latent series onto the true one.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// `truth_dim × learned_dim`.
    pub a: Matrix,
    pub b: Vector,
    pub residual_rmse: f64,
}

impl Alignment {
    pub fn apply(&self, learned: &Vector) -> Result<Vector> {
        let mut out = self.a.matvec(learned)?;
        for (o, b) in out.iter_mut().zip(self.b.iter()) {
            *o += b;
        }
        Ok(out)
    }
}

/// Least-squares affine alignment `A·learned_k + b ≈ truth_k`.
pub fn align_latent(learned: &[Vector], truth: &[Vector]) -> Result<Alignment> {
    if learned.len() != truth.len() {
        return Err(Error::dim("align_latent lengths", truth.len(), learned.len()));
    }
    let n = learned.len();
    let dl = learned.first().ok_or(Error::EmptyInput("align_latent"))?.dim();
    let dt = truth[0].dim();
    if n < dl + 1 {
        return Err(Error::InvalidArgument(format!(
            "affine alignment in {dl} dimensions needs at least {} points, got {n}",
            dl + 1
        )));
    }
    let mut design = Matrix::zeros(n, dl + 1);
    let mut target = Matrix::zeros(n, dt);
    for k in 0..n {
        if learned[k].dim() != dl || truth[k].dim() != dt {
            return Err(Error::InvalidArgument("align_latent series have mixed dimensions".into()));
        }
        let row = design.row_mut(k);
        row[..dl].copy_from_slice(&learned[k]);
        row[dl] = 1.0;
        target.row_mut(k).copy_from_slice(&truth[k]);
    }
    let beta = ridge_least_squares(&design, &target, 0.0).map_err(|e| match e {
        Error::RankDeficient(msg) => Error::RankDeficient(format!("learned latent cloud is degenerate: {msg}")),
        other => other,
    })?;
    let mut a = Matrix::zeros(dt, dl);
    let mut b = Vector::zeros(dt);
    for i in 0..dt {
        for j in 0..dl {
            a[(i, j)] = beta[(j, i)];
        }
        b[i] = beta[(dl, i)];
    }
    let mut sq = 0.0;
    for k in 0..n {
        for i in 0..dt {
            let pred = crate::linalg::dot(a.row(i), &learned[k]) + b[i];
            sq += (pred - truth[k][i]).powi(2);
        }
    }
    Ok(Alignment {
        a,
        b,
        residual_rmse: (sq / (n * dt) as f64).sqrt(),
    })
}

/// Settings of the latent-identification experiment on Lorenz-63 seen
/// through a random linear observation map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatentExperiment {
    pub obs_dim: usize,
    pub latent_dim: usize,
    pub n_blocks: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub normalize: bool,
    /// Observe the latent state directly, padded with zero rows, instead of
    /// through a random map.
    pub identity_observation: bool,
    pub train: TrainConfig,
}

impl Default for LatentExperiment {
    fn default() -> Self {
        LatentExperiment {
            obs_dim: 5,
            latent_dim: 3,
            n_blocks: 1,
            n_train: 20_000,
            n_test: 1000,
            seed: 0,
            normalize: true,
            identity_observation: false,
            train: TrainConfig {
                epochs: 200,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct LatentOutcome {
    pub map: LatentObservationMap,
    pub model: LatentModel,
    pub history: TrainHistory,
    pub test_truth: Trajectory,
    /// Encoded test observations after alignment onto the true latent states.
    pub aligned: Vec<Vector>,
    pub alignment: Alignment,
    /// One-step RMSE on the test observations.
    pub test_rmse: f64,
    /// Per-dimension standard deviation of the true test latent states.
    pub truth_std: Vector,
}

impl LatentOutcome {
    /// Alignment residual divided by the smallest true per-dimension std.
    pub fn relative_residual(&self) -> f64 {
        let smallest = self.truth_std.iter().copied().fold(f64::INFINITY, f64::min);
        self.alignment.residual_rmse / smallest
    }

    /// Writes the true and aligned learned latent series as CSV.
    pub fn write_latent_csvs(&self, truth_path: &std::path::Path, aligned_path: &std::path::Path) -> Result<()> {
        self.test_truth.save_csv(truth_path)?;
        let aligned = Trajectory::new(self.test_truth.t0(), self.test_truth.h(), self.aligned.clone())?;
        aligned.save_csv(aligned_path)
    }

    pub fn summary(&self) -> String {
        format!(
            "latent one-step test RMSE {}\nalignment residual RMSE {}\nrelative residual {}",
            format_sig17(self.test_rmse),
            format_sig17(self.alignment.residual_rmse),
            format_sig17(self.relative_residual())
        )
    }
}

/// Generates Lorenz-63 data, observes it through a seeded map, trains the
/// latent model, and aligns the encoded test observations with the truth.
pub fn run_latent_experiment(exp: &LatentExperiment) -> Result<LatentOutcome> {
    let root = SeededRng::new(exp.seed);
    let system = OdeSystem::lorenz63();
    let spec = DatasetSpec {
        n_train: exp.n_train,
        n_test: exp.n_test,
        ..DatasetSpec::standard(system, exp.seed)
    };
    let (train_latent_traj, test_latent) = generate_dataset(&spec)?;
    let map = if exp.identity_observation {
        LatentObservationMap::identity_padded(exp.obs_dim, exp.latent_dim)?
    } else {
        LatentObservationMap::random(exp.obs_dim, exp.latent_dim, &mut root.derive("observation"))?
    };
    let train_obs = synthesize_observations(&train_latent_traj, &map)?;
    let test_obs = synthesize_observations(&test_latent, &map)?;
    let pairs = make_pairs(&train_obs)?;
    let norm = if exp.normalize {
        Some(Normalization::from_data(train_obs.states())?)
    } else {
        None
    };
    let model = LatentModel::init(exp.obs_dim, exp.latent_dim, exp.n_blocks, spec.h, &mut root.derive("init"))?
        .with_norm(norm)?;
    let train_cfg = TrainConfig {
        seed: exp.seed,
        ..exp.train.clone()
    };
    let (model, history) = train_latent(model, &pairs, &train_cfg)?;
    let test_pairs = make_pairs(&test_obs)?;
    let test_rmse = one_step_rmse(&model, &test_pairs);
    let encoded = test_obs.states().iter().map(|y| model.encode(y)).collect::<Result<Vec<_>>>()?;
    let alignment = align_latent(&encoded, test_latent.states())?;
    let aligned = encoded.iter().map(|u| alignment.apply(u)).collect::<Result<Vec<_>>>()?;
    let (_, truth_std) = crate::linalg::standardize_stats(test_latent.states())?;
    Ok(LatentOutcome {
        map,
        model,
        history,
        test_truth: test_latent,
        aligned,
        alignment,
        test_rmse,
        truth_std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::gradcheck_report;

    fn random_latent(n_blocks: usize, seed: u64) -> LatentModel {
        let mut rng = SeededRng::new(seed);
        let mut m = LatentModel::init(5, 3, n_blocks, 0.1, &mut rng).unwrap();
        for t in m.tensors_mut() {
            for v in t.iter_mut() {
                if *v == 0.0 {
                    *v = rng.uniform(-0.3, 0.3);
                }
            }
        }
        m
    }

    #[test]
    fn identity_padded_map_passes_latent_through() {
        let map = LatentObservationMap::identity_padded(5, 3).unwrap();
        let states: Vec<Vector> = (0..4).map(|k| Vector::from([k as f64, -1.0, 2.5])).collect();
        let tr = Trajectory::new(0.0, 0.01, states.clone()).unwrap();
        let obs = synthesize_observations(&tr, &map).unwrap();
        assert_eq!(obs.len(), tr.len());
        for (y, x) in obs.states().iter().zip(&states) {
            assert_eq!(&y[..3], &x[..]);
            assert_eq!(&y[3..], &[0.0, 0.0]);
        }
    }

    #[test]
    fn rank_deficient_map_is_rejected() {
        let h = Matrix::from_rows(&vec![vec![1.0, 2.0, 3.0]; 5]).unwrap();
        assert!(matches!(LatentObservationMap::new(h), Err(Error::RankDeficient(_))));
        let m = LatentObservationMap::random(5, 3, &mut SeededRng::new(3)).unwrap();
        assert!(smallest_singular_value(&m.h).unwrap() > MIN_SINGULAR_VALUE);
    }

    #[test]
    fn zero_dynamics_is_identity() {
        let mut m = LatentModel::init(5, 3, 4, 0.01, &mut SeededRng::new(1)).unwrap();
        m.dynamics.block = BlockParams::zeros(3, 3, 3);
        let y = Vector::from([1.0, -2.0, 0.5, 3.0, 4.0]);
        assert_eq!(latent_forward(&m, &y).unwrap(), y);
        assert!(latent_forward(&m, &Vector::zeros(3)).is_err());
    }

    #[test]
    fn square_identity_wrapping_reduces_to_model_forward() {
        for n in [1, 4] {
            let dynamics = BiNNModel::new(BlockParams::init(3, 3, 3, &mut SeededRng::new(n as u64)).unwrap(), n, 0.05).unwrap();
            let m = LatentModel {
                encoder: Matrix::identity(3),
                encoder_bias: Vector::zeros(3),
                dynamics: dynamics.clone(),
                decoder: Matrix::identity(3),
                decoder_bias: Vector::zeros(3),
                norm: None,
            };
            let y = Vector::from([0.7, -1.3, 2.2]);
            assert_eq!(latent_forward(&m, &y).unwrap(), dynamics.forward(&y).unwrap());
        }
    }

    #[test]
    fn gradcheck_latent_composition() {
        let mut rng = SeededRng::new(11);
        let inputs = (0..6).map(|_| (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
        let targets = (0..6).map(|_| (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
        let sample = PairDataset::new(inputs, targets, 0.1).unwrap();
        for n in [1, 4] {
            let r = gradcheck_report(&random_latent(n, 40 + n as u64), &sample).unwrap();
            assert!(r.max_rel_error < 1e-5, "n_blocks {n}: {r:?}");
        }
        let norm = Normalization::new(Vector::from([0.1, 0.0, -0.2, 0.3, 0.5]), Vector::from([1.5, 0.7, 2.0, 1.0, 0.4])).unwrap();
        let m = random_latent(4, 50).with_norm(Some(norm)).unwrap();
        let r = gradcheck_report(&m, &sample).unwrap();
        assert!(r.max_rel_error < 1e-5, "normalized: {r:?}");
    }

    #[test]
    fn alignment_of_identical_and_rotated_series() {
        let mut rng = SeededRng::new(12);
        let truth: Vec<Vector> = (0..50).map(|_| (0..3).map(|_| rng.uniform(-5.0, 5.0)).collect()).collect();
        let al = align_latent(&truth, &truth).unwrap();
        assert!(al.residual_rmse < 1e-10);
        for i in 0..3 {
            assert!((al.b[i]).abs() < 1e-10);
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((al.a[(i, j)] - e).abs() < 1e-10);
            }
        }

        let (c, s) = (0.6_f64, 0.8_f64);
        let r = Matrix::from_rows(&[vec![c, -s, 0.0], vec![s, c, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let learned: Vec<Vector> = truth.iter().map(|x| r.matvec(x).unwrap()).collect();
        let al = align_latent(&learned, &truth).unwrap();
        assert!(al.residual_rmse < 1e-10);
        let rt = r.transpose();
        for i in 0..3 {
            for j in 0..3 {
                assert!((al.a[(i, j)] - rt[(i, j)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn alignment_rejects_degenerate_cloud() {
        let truth: Vec<Vector> = (0..10).map(|k| Vector::from([k as f64, (k * k) as f64, 1.0])).collect();
        let flat: Vec<Vector> = (0..10).map(|k| Vector::from([k as f64, 2.0 * k as f64, 0.0])).collect();
        assert!(matches!(align_latent(&flat, &truth), Err(Error::RankDeficient(_))));
        assert!(align_latent(&flat[..3], &truth[..3]).is_err());
    }
}
