//! Training objectives: ERM plus five invariance-seeking variants.
//!
//! Each objective is computed per environment as a scalar value together
//! with a closed-form logit seed `∂total/∂z`, so one reverse pass through
//! the network suffices even for the penalties whose textbook form needs
//! double backprop. Every seed here is validated against central finite
//! differences in the test suite; the finite-difference form is
//! authoritative if they ever disagree.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{colwise_mean_var, matmul, matmul_a_bt, matmul_at_b, rowwise_softmax, Matrix};
use crate::nn::{self, AdamState, ForwardTrace, MlpGrads, MlpParams};

/// Which training objective to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Erm,
    Irmv1,
    Ibirm,
    Pair,
    Irmgame,
    Birm,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::Irmv1 => "irmv1",
            Method::Ibirm => "ibirm",
            Method::Pair => "pair",
            Method::Irmgame => "irmgame",
            Method::Birm => "birm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GameVariant {
    F,
    V,
}

/// Objective choice plus its hyperparameters. Fields irrelevant to the
/// chosen method are ignored but still validated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodConfig {
    pub method: Method,
    /// Penalty weight on the dummy-classifier gradient norm.
    pub lambda: f64,
    /// Bottleneck weight on the logit-variance penalty.
    pub gamma: f64,
    /// Exponent of the shared penalty scaling 10^preference (PAIR).
    pub preference: u32,
    /// Stddev of the Gaussian noise on the dummy classifier (BIRM).
    pub birm_sd: f64,
    /// Monte Carlo sample count (BIRM).
    pub birm_n: usize,
    pub irmgame_variant: GameVariant,
}

impl MethodConfig {
    pub fn new(method: Method) -> Self {
        MethodConfig {
            method,
            lambda: 1.0,
            gamma: 1.0,
            preference: 0,
            birm_sd: 0.1,
            birm_n: 5,
            irmgame_variant: GameVariant::F,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::Config(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        if !self.birm_sd.is_finite() || self.birm_sd <= 0.0 {
            return Err(Error::Config(format!(
                "birm_sd must be > 0, got {}",
                self.birm_sd
            )));
        }
        if self.birm_n == 0 {
            return Err(Error::Config("birm_n must be >= 1".into()));
        }
        Ok(())
    }
}

/// One environment's contribution to the assembled objective.
///
/// `seed` is the complete `∂total/∂z` for this environment's logits.
/// `penalty` is the environment's weighted penalty share of the total,
/// excluding cross-environment variance terms (which cannot be attributed
/// to a single environment).
#[derive(Debug, Clone)]
pub struct EnvObjective {
    pub env_index: usize,
    pub risk: f64,
    pub penalty: f64,
    pub seed: Matrix,
}

/// Per-environment mean cross-entropy with zero penalty.
pub fn erm_objective(envs: &[(&Matrix, &[usize])]) -> Result<Vec<EnvObjective>> {
    let mut out = Vec::with_capacity(envs.len());
    for (idx, (z, y)) in envs.iter().enumerate() {
        let (risk, seed) = nn::cross_entropy(z, y)?;
        out.push(EnvObjective {
            env_index: idx,
            risk,
            penalty: 0.0,
            seed,
        });
    }
    Ok(out)
}

/// Scalar derivative of the mean cross-entropy with respect to a scalar
/// multiplier `w` on the logits, evaluated at `w`, plus its gradient in z.
///
/// With `q = softmax(w·z)` row-wise:
///   g(w)      = (1/n) Σ_i Σ_k z_ik (q_ik − y_ik)
///   ∂g/∂z_ij  = (1/n) [ (q_ij − y_ij) + w·q_ij (z_ij − Σ_k z_ik q_ik) ]
fn dummy_scale_grad(z: &Matrix, q: &Matrix, y: &[usize], w: f64) -> Result<(f64, Matrix)> {
    if q.shape() != z.shape() {
        return Err(Error::Dim(format!(
            "softmax shape {:?} != logits shape {:?}",
            q.shape(),
            z.shape()
        )));
    }
    if y.len() != z.rows() {
        return Err(Error::Dim(format!(
            "{} labels for {} logit rows",
            y.len(),
            z.rows()
        )));
    }
    let n = z.rows() as f64;
    let k = z.cols();
    let mut g = 0.0;
    let mut dg = Matrix::zeros(z.rows(), k);
    for i in 0..z.rows() {
        let z_row = z.row(i);
        let q_row = q.row(i);
        let zq: f64 = z_row.iter().zip(q_row).map(|(&a, &b)| a * b).sum();
        for j in 0..k {
            let onehot = if j == y[i] { 1.0 } else { 0.0 };
            g += z_row[j] * (q_row[j] - onehot);
            dg.set(i, j, ((q_row[j] - onehot) + w * q_row[j] * (z_row[j] - zq)) / n);
        }
    }
    g /= n;
    Ok((g, dg))
}

/// Squared gradient of the per-environment risk with respect to the fixed
/// dummy classifier (scalar logit multiplier at 1.0).
///
/// `p` must be `rowwise_softmax(z)`. Returns `(g², ∂g²/∂z)`.
pub fn irmv1_penalty(z: &Matrix, p: &Matrix, y: &[usize]) -> Result<(f64, Matrix)> {
    let (g, dg) = dummy_scale_grad(z, p, y, 1.0)?;
    let seed = dg.scale(2.0 * g)?;
    Ok((g * g, seed))
}

/// Logit-variance bottleneck penalty: mean over logit dimensions of the
/// per-dimension population variance over the batch.
///
/// Returns the penalty and its seed `(2/(nK))(z_ij − mean_i z_ij)`.
pub fn ibirm_penalty(z: &Matrix) -> Result<(f64, Matrix)> {
    let (means, vars) = colwise_mean_var(z)?;
    let k = z.cols() as f64;
    let n = z.rows() as f64;
    let penalty = vars.iter().sum::<f64>() / k;
    let mut seed = Matrix::zeros(z.rows(), z.cols());
    for i in 0..z.rows() {
        for j in 0..z.cols() {
            seed.set(i, j, 2.0 / (n * k) * (z.get(i, j) - means[j]));
        }
    }
    Ok((penalty, seed))
}

/// Population variance of the per-environment risks, with per-environment
/// scalar seeds `(2/|E|)(R_e − mean R)` to be chained into each
/// environment's cross-entropy seed.
pub fn vrex_penalty(risks: &[f64]) -> Result<(f64, Vec<f64>)> {
    if risks.is_empty() {
        return Err(Error::Domain("vrex_penalty on zero environments".into()));
    }
    let n = risks.len() as f64;
    let mean = risks.iter().sum::<f64>() / n;
    let var = risks.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let seeds = risks.iter().map(|r| 2.0 / n * (r - mean)).collect();
    Ok((var, seeds))
}

/// Multi-objective composition: `L_ERM + 10^preference · (L_IRMv1 + L_VREx)`.
///
/// Returns the total and per-environment objectives whose seeds compose all
/// three terms by linearity.
pub fn pair_objective(
    envs: &[(&Matrix, &[usize])],
    preference: u32,
) -> Result<(f64, Vec<EnvObjective>)> {
    if preference > 4 {
        return Err(Error::Config(format!(
            "preference must lie in 0..=4, got {}",
            preference
        )));
    }
    if envs.is_empty() {
        return Err(Error::Domain("pair_objective on zero environments".into()));
    }
    let weight = 10f64.powi(preference as i32);
    let mut risks = Vec::with_capacity(envs.len());
    let mut ce_seeds = Vec::with_capacity(envs.len());
    let mut irm = Vec::with_capacity(envs.len());
    for (z, y) in envs {
        let (risk, ce_seed) = nn::cross_entropy(z, y)?;
        let p = rowwise_softmax(z)?;
        let (pen, pen_seed) = irmv1_penalty(z, &p, y)?;
        risks.push(risk);
        ce_seeds.push(ce_seed);
        irm.push((pen, pen_seed));
    }
    let (vrex, vrex_seeds) = vrex_penalty(&risks)?;
    let total =
        risks.iter().sum::<f64>() + weight * (irm.iter().map(|(p, _)| p).sum::<f64>() + vrex);
    let mut out = Vec::with_capacity(envs.len());
    for (idx, (ce_seed, (pen, pen_seed))) in ce_seeds.into_iter().zip(&irm).enumerate() {
        // seed = (1 + w·∂Var/∂R_e)·ce_seed + w·irmv1_seed, by linearity.
        let mut seed = ce_seed.scale(1.0 + weight * vrex_seeds[idx])?;
        seed.add_assign_scaled(pen_seed, weight)?;
        out.push(EnvObjective {
            env_index: idx,
            risk: risks[idx],
            penalty: weight * pen,
            seed,
        });
    }
    Ok((total, out))
}

/// Monte Carlo dummy-classifier penalty with explicit noise samples.
///
/// `eps` holds the Gaussian draws; sample `s` uses the multiplier
/// `w_s = 1 + eps[s]`. Returns `(1/N) Σ_s g(w_s)²` and its seed.
pub fn birm_penalty_with_noise(z: &Matrix, y: &[usize], eps: &[f64]) -> Result<(f64, Matrix)> {
    if eps.is_empty() {
        return Err(Error::Config("birm needs at least one noise sample".into()));
    }
    let n_samples = eps.len() as f64;
    let mut penalty = 0.0;
    let mut seed = Matrix::zeros(z.rows(), z.cols());
    for &e in eps {
        let w = 1.0 + e;
        let scaled = z.scale(w)?;
        let q = rowwise_softmax(&scaled)?;
        let (g, dg) = dummy_scale_grad(z, &q, y, w)?;
        penalty += g * g;
        seed.add_assign_scaled(&dg, 2.0 * g)?;
    }
    penalty /= n_samples;
    let seed = seed.scale(1.0 / n_samples)?;
    Ok((penalty, seed))
}

/// Draws `birm_n` Gaussian multiplier perturbations from `rng` and averages
/// the dummy-classifier penalty over them.
pub fn birm_penalty<R: Rng>(
    z: &Matrix,
    y: &[usize],
    birm_sd: f64,
    birm_n: usize,
    rng: &mut R,
) -> Result<(f64, Matrix)> {
    if !(birm_sd > 0.0) || !birm_sd.is_finite() {
        return Err(Error::Config(format!("birm_sd must be > 0, got {birm_sd}")));
    }
    if birm_n == 0 {
        return Err(Error::Config("birm_n must be >= 1".into()));
    }
    let eps: Vec<f64> = (0..birm_n)
        .map(|_| {
            let g: f64 = rng.sample(StandardNormal);
            g * birm_sd
        })
        .collect();
    birm_penalty_with_noise(z, y, &eps)
}

/// Assembles the method's total objective over one forward pass and the
/// per-environment seeds `∂total/∂z_e`, composed linearly.
///
/// `rng` is consumed only by BIRM's noise draws.
pub fn assemble_total<R: Rng>(
    cfg: &MethodConfig,
    envs: &[(&Matrix, &[usize])],
    rng: &mut R,
) -> Result<(f64, Vec<EnvObjective>)> {
    cfg.validate()?;
    if envs.is_empty() {
        return Err(Error::Domain("assemble_total on zero environments".into()));
    }
    match cfg.method {
        Method::Erm => {
            let objs = erm_objective(envs)?;
            let total = objs.iter().map(|o| o.risk).sum();
            Ok((total, objs))
        }
        Method::Irmv1 | Method::Ibirm | Method::Birm => {
            let mut total = 0.0;
            let mut out = Vec::with_capacity(envs.len());
            for (idx, (z, y)) in envs.iter().enumerate() {
                let (risk, mut seed) = nn::cross_entropy(z, y)?;
                let mut penalty = 0.0;
                match cfg.method {
                    Method::Irmv1 | Method::Ibirm => {
                        let p = rowwise_softmax(z)?;
                        let (pen, pen_seed) = irmv1_penalty(z, &p, y)?;
                        penalty += cfg.lambda * pen;
                        seed.add_assign_scaled(&pen_seed, cfg.lambda)?;
                        if cfg.method == Method::Ibirm {
                            let (ib, ib_seed) = ibirm_penalty(z)?;
                            penalty += cfg.gamma * ib;
                            seed.add_assign_scaled(&ib_seed, cfg.gamma)?;
                        }
                    }
                    Method::Birm => {
                        let (pen, pen_seed) = birm_penalty(z, y, cfg.birm_sd, cfg.birm_n, rng)?;
                        penalty += cfg.lambda * pen;
                        seed.add_assign_scaled(&pen_seed, cfg.lambda)?;
                    }
                    _ => unreachable!(),
                }
                total += risk + penalty;
                out.push(EnvObjective {
                    env_index: idx,
                    risk,
                    penalty,
                    seed,
                });
            }
            Ok((total, out))
        }
        Method::Pair => pair_objective(envs, cfg.preference),
        Method::Irmgame => Err(Error::Config(
            "irmgame trains through irmgame_round, not assemble_total".into(),
        )),
    }
}

/// Featurizer plus one linear head per training environment. Prediction
/// always uses the head ensemble (mean of all heads).
#[derive(Debug, Clone)]
pub struct GameModel {
    /// `None` fixes the featurizer to the identity (F variant).
    pub featurizer: Option<MlpParams>,
    /// One single-layer head per training environment, all sharing dims.
    pub heads: Vec<MlpParams>,
}

/// Adam accumulators for a [`GameModel`].
#[derive(Debug, Clone)]
pub struct GameOptState {
    pub heads: Vec<AdamState>,
    pub featurizer: Option<AdamState>,
}

impl GameModel {
    /// Builds a game model. `feat_dims`, when given, are the featurizer MLP
    /// dims after `input_dim`; heads then map its output to `num_classes`.
    /// Without `feat_dims` the featurizer is the identity and heads act on
    /// raw inputs.
    pub fn init(
        input_dim: usize,
        feat_dims: Option<&[usize]>,
        num_envs: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<GameModel> {
        if num_envs == 0 {
            return Err(Error::Config(
                "game model needs at least one environment".into(),
            ));
        }
        let (featurizer, head_in) = match feat_dims {
            Some(dims) => {
                let mut full = vec![input_dim];
                full.extend_from_slice(dims);
                let f = nn::mlp_init(&full, seed)?;
                let out = f.output_dim();
                (Some(f), out)
            }
            None => (None, input_dim),
        };
        let heads = (0..num_envs)
            .map(|e| nn::mlp_init(&[head_in, num_classes], seed.wrapping_add(1 + e as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(GameModel { featurizer, heads })
    }

    pub fn num_envs(&self) -> usize {
        self.heads.len()
    }

    /// Applies the featurizer (or identity) to a batch.
    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        match &self.featurizer {
            Some(f) => nn::predict_logits(f, x),
            None => Ok(x.clone()),
        }
    }

    /// Mean head `(W̄, b̄)` with `W̄ = (1/|E|) Σ_e W_e`.
    fn mean_head(&self) -> Result<(Matrix, Vec<f64>)> {
        let e = self.heads.len() as f64;
        let mut w = self.heads[0].weight(0).clone();
        let mut b = self.heads[0].bias(0).to_vec();
        for head in &self.heads[1..] {
            w.add_assign_scaled(head.weight(0), 1.0)?;
            for (acc, &v) in b.iter_mut().zip(head.bias(0)) {
                *acc += v;
            }
        }
        let w = w.scale(1.0 / e)?;
        for v in b.iter_mut() {
            *v /= e;
        }
        Ok((w, b))
    }

    /// Ensemble logits on already-featurized inputs.
    pub fn ensemble_logits(&self, features: &Matrix) -> Result<Matrix> {
        let (w, b) = self.mean_head()?;
        let mut z = matmul(features, &w)?;
        let cols = z.cols();
        for i in 0..z.rows() {
            let row = &mut z.data_mut()[i * cols..(i + 1) * cols];
            for (v, &bias) in row.iter_mut().zip(&b) {
                *v += bias;
            }
        }
        Ok(z)
    }

    /// Ensemble class probabilities for raw inputs.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        let h = self.features(x)?;
        let z = self.ensemble_logits(&h)?;
        rowwise_softmax(&z)
    }

    pub fn opt_state(&self) -> GameOptState {
        GameOptState {
            heads: self.heads.iter().map(AdamState::new).collect(),
            featurizer: self.featurizer.as_ref().map(AdamState::new),
        }
    }
}

/// Gradient of environment `env`'s ensemble cross-entropy with respect to
/// that environment's own head. Carries the `1/|E|` ensemble factor.
///
/// Returns the gradient and the ensemble risk on this batch.
pub fn game_head_gradient(
    game: &GameModel,
    env: usize,
    features: &Matrix,
    y: &[usize],
) -> Result<(MlpGrads, f64)> {
    if env >= game.heads.len() {
        return Err(Error::Dim(format!(
            "environment index {} out of {} heads",
            env,
            game.heads.len()
        )));
    }
    let z = game.ensemble_logits(features)?;
    let (risk, seed) = nn::cross_entropy(&z, y)?;
    let factor = 1.0 / game.heads.len() as f64;
    let d_w = matmul_at_b(features, &seed)?.scale(factor)?;
    let mut d_b = vec![0.0; seed.cols()];
    for i in 0..seed.rows() {
        for (s, &v) in d_b.iter_mut().zip(seed.row(i)) {
            *s += factor * v;
        }
    }
    Ok((
        MlpGrads {
            d_weights: vec![d_w],
            d_biases: vec![d_b],
        },
        risk,
    ))
}

/// Summed-ensemble cross-entropy gradient for the featurizer (V variant).
pub fn game_featurizer_gradient(
    game: &GameModel,
    traces: &[ForwardTrace],
    batches: &[(&Matrix, &[usize])],
) -> Result<MlpGrads> {
    let featurizer = game
        .featurizer
        .as_ref()
        .ok_or_else(|| Error::Config("featurizer gradient on identity featurizer".into()))?;
    let (mean_w, _) = game.mean_head()?;
    let mut acc = MlpGrads::zeros_like(featurizer);
    for (trace, (_, y)) in traces.iter().zip(batches) {
        let h = trace.logits();
        let z = game.ensemble_logits(h)?;
        let (_, seed) = nn::cross_entropy(&z, y)?;
        // ∂CE/∂h = seed · W̄ᵀ
        let h_seed = matmul_a_bt(&seed, &mean_w)?;
        let g = nn::backward(featurizer, trace, &h_seed)?;
        acc.accumulate(&g)?;
    }
    Ok(acc)
}

/// One best-response sweep: in fixed environment order, each environment
/// takes the current ensemble logits on its batch, computes its own
/// cross-entropy, and applies one Adam step to its head only. In the V
/// variant, the featurizer then takes one Adam step on the summed ensemble
/// cross-entropy across environments.
///
/// Returns the per-environment ensemble risks observed at each turn.
pub fn irmgame_round(
    game: &mut GameModel,
    opt: &mut GameOptState,
    variant: GameVariant,
    batches: &[(&Matrix, &[usize])],
    lr: f64,
) -> Result<Vec<f64>> {
    if batches.len() != game.heads.len() {
        return Err(Error::Dim(format!(
            "{} batches for {} heads",
            batches.len(),
            game.heads.len()
        )));
    }
    let mut risks = Vec::with_capacity(batches.len());
    for (e, (x, y)) in batches.iter().enumerate() {
        let features = game.features(x)?;
        let (grads, risk) = game_head_gradient(game, e, &features, y)?;
        nn::adam_step(&mut game.heads[e], &grads, &mut opt.heads[e], lr)?;
        risks.push(risk);
    }
    if variant == GameVariant::V {
        if game.featurizer.is_none() {
            return Err(Error::Config(
                "V variant requires a trainable featurizer".into(),
            ));
        }
        let traces: Vec<ForwardTrace> = batches
            .iter()
            .map(|(x, _)| nn::forward(game.featurizer.as_ref().unwrap(), x))
            .collect::<Result<Vec<_>>>()?;
        let grads = game_featurizer_gradient(game, &traces, batches)?;
        nn::adam_step(
            game.featurizer.as_mut().unwrap(),
            &grads,
            opt.featurizer.as_mut().unwrap(),
            lr,
        )?;
    }
    Ok(risks)
}
