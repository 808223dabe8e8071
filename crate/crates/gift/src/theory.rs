//! Exact-arithmetic checks of the distributional claims behind the chain
//! design, on small discrete description-code joints.
//!
//! Three facts motivate drawing training codes from the marginal code
//! distribution of a description-code space instead of the conditional
//! distribution of one fixed description:
//!
//! 1. The cross-entropy loss under the marginal equals the expectation of
//!    per-description conditional losses over the description distribution
//!    (law of total expectation) — [`loss_marginal`] asserts this identity
//!    to 1e-12 on every call.
//! 2. Alternating conditional sampling (code given description, description
//!    given code) converges to the joint, hence the collected codes to the
//!    marginal — [`gibbs_chain`] lets tests measure the total-variation
//!    distance against [`exact_marginal`].
//! 3. The marginal variance dominates the expected conditional variance
//!    (law of total variance) — [`variance_decomposition`] computes all
//!    three terms exactly.
//!
//! Everything here is dense and desk-scale (matrices up to ~20x20); the
//! point is exactness, not throughput.

use rand::Rng;
use thiserror::Error;

/// Tolerance for the algebraic identities checked in this module.
pub const IDENTITY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("internal consistency violated: |{lhs} - {rhs}| = {diff} exceeds {tol}")]
    IdentityViolation {
        lhs: f64,
        rhs: f64,
        diff: f64,
        tol: f64,
    },
    #[error("index out of bounds: {0}")]
    IndexOutOfBounds(String),
}

/// Exact finite joint distribution over (description, code) index pairs.
/// Rows are descriptions, columns are codes.
#[derive(Debug, Clone)]
pub struct DiscreteJoint {
    p: Vec<Vec<f64>>,
    code_values: Option<Vec<f64>>,
}

impl DiscreteJoint {
    /// Build a joint from a dense matrix. Entries must be nonnegative and
    /// sum to 1 within 1e-12, and every row and column must carry positive
    /// mass so that both conditionals are well-defined.
    pub fn new(p: Vec<Vec<f64>>, code_values: Option<Vec<f64>>) -> Result<Self, TheoryError> {
        if p.is_empty() || p[0].is_empty() {
            return Err(TheoryError::InvalidDistribution("empty matrix".into()));
        }
        let cols = p[0].len();
        if p.iter().any(|row| row.len() != cols) {
            return Err(TheoryError::InvalidDistribution(
                "ragged matrix rows".into(),
            ));
        }
        let mut total = 0.0;
        for row in &p {
            for &v in row {
                if !(v >= 0.0) {
                    return Err(TheoryError::InvalidDistribution(format!(
                        "negative or NaN entry {v}"
                    )));
                }
                total += v;
            }
        }
        if (total - 1.0).abs() > IDENTITY_TOL {
            return Err(TheoryError::InvalidDistribution(format!(
                "entries sum to {total}, not 1"
            )));
        }
        for (j, row) in p.iter().enumerate() {
            if row.iter().sum::<f64>() <= 0.0 {
                return Err(TheoryError::InvalidDistribution(format!(
                    "row {j} has zero mass"
                )));
            }
        }
        for k in 0..cols {
            if p.iter().map(|row| row[k]).sum::<f64>() <= 0.0 {
                return Err(TheoryError::InvalidDistribution(format!(
                    "column {k} has zero mass"
                )));
            }
        }
        if let Some(values) = &code_values {
            if values.len() != cols {
                return Err(TheoryError::InvalidDistribution(format!(
                    "code_values has {} entries for {} columns",
                    values.len(),
                    cols
                )));
            }
        }
        Ok(DiscreteJoint { p, code_values })
    }

    pub fn num_descriptions(&self) -> usize {
        self.p.len()
    }

    pub fn num_codes(&self) -> usize {
        self.p[0].len()
    }

    /// Row sums: the description marginal.
    pub fn description_marginal(&self) -> Vec<f64> {
        self.p.iter().map(|row| row.iter().sum()).collect()
    }

    fn conditional_code_given_description(&self, d: usize) -> Vec<f64> {
        let row = &self.p[d];
        let mass: f64 = row.iter().sum();
        row.iter().map(|&v| v / mass).collect()
    }

    fn conditional_description_given_code(&self, c: usize) -> Vec<f64> {
        let mass: f64 = self.p.iter().map(|row| row[c]).sum();
        self.p.iter().map(|row| row[c] / mass).collect()
    }
}

/// Column sums of the joint: the marginal code distribution.
pub fn exact_marginal(joint: &DiscreteJoint) -> Vec<f64> {
    (0..joint.num_codes())
        .map(|k| joint.p.iter().map(|row| row[k]).sum())
        .collect()
}

fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let mut u: f64 = rng.gen();
    for (i, &p) in probs.iter().enumerate() {
        u -= p;
        if u <= 0.0 {
            return i;
        }
    }
    probs.len() - 1
}

/// Alternate `c ~ P(c|d)`, `d ~ P(d|c)` for `steps` iterations starting from
/// description `start_d`, and return the empirical code frequencies of the
/// post-burn-in draws.
pub fn gibbs_chain<R: Rng>(
    joint: &DiscreteJoint,
    start_d: usize,
    steps: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<Vec<f64>, TheoryError> {
    if start_d >= joint.num_descriptions() {
        return Err(TheoryError::IndexOutOfBounds(format!(
            "start_d {start_d} >= {}",
            joint.num_descriptions()
        )));
    }
    if steps <= burn_in {
        return Err(TheoryError::InvalidDistribution(format!(
            "steps {steps} must exceed burn_in {burn_in}"
        )));
    }
    let mut counts = vec![0u64; joint.num_codes()];
    let mut d = start_d;
    let mut kept = 0u64;
    for step in 0..steps {
        let c = sample_categorical(&joint.conditional_code_given_description(d), rng);
        d = sample_categorical(&joint.conditional_description_given_code(c), rng);
        if step >= burn_in {
            counts[c] += 1;
            kept += 1;
        }
    }
    Ok(counts.iter().map(|&n| n as f64 / kept as f64).collect())
}

/// Total-variation distance between two distributions over the same support.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
}

/// Row-stochastic matrix of model conditionals: `q[j][k] = P(code k | description j)`.
/// Entries must be strictly positive so every log is finite.
#[derive(Debug, Clone)]
pub struct ModelConditional {
    q: Vec<Vec<f64>>,
}

impl ModelConditional {
    pub fn new(q: Vec<Vec<f64>>) -> Result<Self, TheoryError> {
        if q.is_empty() || q[0].is_empty() {
            return Err(TheoryError::InvalidDistribution("empty matrix".into()));
        }
        let cols = q[0].len();
        for (j, row) in q.iter().enumerate() {
            if row.len() != cols {
                return Err(TheoryError::InvalidDistribution(
                    "ragged matrix rows".into(),
                ));
            }
            if row.iter().any(|&v| !(v > 0.0)) {
                return Err(TheoryError::InvalidDistribution(format!(
                    "row {j} has a nonpositive entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > IDENTITY_TOL {
                return Err(TheoryError::InvalidDistribution(format!(
                    "row {j} sums to {sum}, not 1"
                )));
            }
        }
        Ok(ModelConditional { q })
    }

    pub fn num_descriptions(&self) -> usize {
        self.q.len()
    }

    pub fn num_codes(&self) -> usize {
        self.q[0].len()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.q[j]
    }
}

/// Cross-entropy of the `source_d` conditional against the log of the
/// `target_d` conditional: the per-description training loss when codes are
/// sampled from `source_d` but the model is trained to emit them for
/// `target_d`. Equals the entropy of the row when `source_d == target_d`.
pub fn loss_conditional(q: &ModelConditional, target_d: usize, source_d: usize) -> f64 {
    q.row(source_d)
        .iter()
        .zip(q.row(target_d).iter())
        .map(|(&p_src, &p_tgt)| -p_src * p_tgt.ln())
        .sum()
}

/// Training loss when codes are drawn from the marginal induced by the
/// description distribution `p_d`. Computed directly as
/// `-sum_c P_c(c) log q[target_d][c]` and cross-checked on every call
/// against the expectation of per-description conditional losses; any gap
/// beyond 1e-12 is an internal-consistency error.
pub fn loss_marginal(
    q: &ModelConditional,
    p_d: &[f64],
    target_d: usize,
) -> Result<f64, TheoryError> {
    if p_d.len() != q.num_descriptions() {
        return Err(TheoryError::InvalidDistribution(format!(
            "p_d has {} entries for {} descriptions",
            p_d.len(),
            q.num_descriptions()
        )));
    }
    let sum: f64 = p_d.iter().sum();
    if (sum - 1.0).abs() > IDENTITY_TOL {
        return Err(TheoryError::InvalidDistribution(format!(
            "p_d sums to {sum}, not 1"
        )));
    }
    if target_d >= q.num_descriptions() {
        return Err(TheoryError::IndexOutOfBounds(format!(
            "target_d {target_d}"
        )));
    }

    // Marginal route: P_c(c) = sum_j p_d(j) q[j][c].
    let marginal: Vec<f64> = (0..q.num_codes())
        .map(|c| (0..q.num_descriptions()).map(|j| p_d[j] * q.row(j)[c]).sum())
        .collect();
    let direct: f64 = marginal
        .iter()
        .zip(q.row(target_d).iter())
        .map(|(&p_c, &p_tgt)| -p_c * p_tgt.ln())
        .sum();

    // Expectation route: sum_j p_d(j) L(target | source=j).
    let expectation: f64 = (0..q.num_descriptions())
        .map(|j| p_d[j] * loss_conditional(q, target_d, j))
        .sum();

    let diff = (direct - expectation).abs();
    if diff > IDENTITY_TOL {
        return Err(TheoryError::IdentityViolation {
            lhs: direct,
            rhs: expectation,
            diff,
            tol: IDENTITY_TOL,
        });
    }
    Ok(direct)
}

/// The three terms of the law of total variance for the code-value random
/// variable: `Var(c) = E[Var(c|d)] + Var(E[c|d])`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceDecomposition {
    pub var_c: f64,
    pub expected_cond_var: f64,
    pub var_of_cond_mean: f64,
}

/// Compute the decomposition exactly. Requires `code_values` on the joint.
pub fn variance_decomposition(joint: &DiscreteJoint) -> Result<VarianceDecomposition, TheoryError> {
    let values = joint.code_values.as_ref().ok_or_else(|| {
        TheoryError::InvalidDistribution("code_values required for variance computations".into())
    })?;

    let marginal = exact_marginal(joint);
    let mean: f64 = marginal.iter().zip(values.iter()).map(|(p, v)| p * v).sum();
    let var_c: f64 = marginal
        .iter()
        .zip(values.iter())
        .map(|(p, v)| p * (v - mean).powi(2))
        .sum();

    let p_d = joint.description_marginal();
    let mut expected_cond_var = 0.0;
    let mut var_of_cond_mean = 0.0;
    for (j, &pj) in p_d.iter().enumerate() {
        let conditional = joint.conditional_code_given_description(j);
        let cond_mean: f64 = conditional
            .iter()
            .zip(values.iter())
            .map(|(p, v)| p * v)
            .sum();
        let cond_var: f64 = conditional
            .iter()
            .zip(values.iter())
            .map(|(p, v)| p * (v - cond_mean).powi(2))
            .sum();
        expected_cond_var += pj * cond_var;
        var_of_cond_mean += pj * (cond_mean - mean).powi(2);
    }

    Ok(VarianceDecomposition {
        var_c,
        expected_cond_var,
        var_of_cond_mean,
    })
}

/// Draw a random joint with entries bounded away from zero, so conditionals
/// are well-defined and the induced chain is ergodic.
pub fn random_joint<R: Rng>(
    rows: usize,
    cols: usize,
    with_values: bool,
    rng: &mut R,
) -> DiscreteJoint {
    let mut p: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..cols).map(|_| rng.gen_range(0.05..1.0)).collect())
        .collect();
    let total: f64 = p.iter().flatten().sum();
    let mut acc = 0.0;
    for row in p.iter_mut() {
        for v in row.iter_mut() {
            *v /= total;
            acc += *v;
        }
    }
    // Nudge the last entry so the sum is exactly 1 in floating point.
    let last_row = p.len() - 1;
    let last_col = p[last_row].len() - 1;
    p[last_row][last_col] += 1.0 - acc;
    let code_values = with_values.then(|| (0..cols).map(|_| rng.gen_range(-2.0..2.0)).collect());
    DiscreteJoint::new(p, code_values).expect("construction is valid by design")
}

/// Draw a random strictly positive row-stochastic conditional.
pub fn random_conditional<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> ModelConditional {
    let q: Vec<Vec<f64>> = (0..rows)
        .map(|_| {
            let mut row: Vec<f64> = (0..cols).map(|_| rng.gen_range(0.01..1.0)).collect();
            let sum: f64 = row.iter().sum();
            let mut acc = 0.0;
            for v in row.iter_mut() {
                *v /= sum;
                acc += *v;
            }
            let last = row.len() - 1;
            row[last] += 1.0 - acc;
            row
        })
        .collect();
    ModelConditional::new(q).expect("construction is valid by design")
}

/// Draw a random description distribution.
pub fn random_description_distribution<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
    let sum: f64 = p.iter().sum();
    let mut acc = 0.0;
    for v in p.iter_mut() {
        *v /= sum;
        acc += *v;
    }
    let last = p.len() - 1;
    p[last] += 1.0 - acc;
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn worked_joint() -> DiscreteJoint {
        DiscreteJoint::new(
            vec![vec![0.4, 0.1], vec![0.1, 0.4]],
            Some(vec![0.0, 1.0]),
        )
        .unwrap()
    }

    #[test]
    fn marginal_of_symmetric_joint_is_uniform() {
        let marginal = exact_marginal(&worked_joint());
        assert!((marginal[0] - 0.5).abs() < IDENTITY_TOL);
        assert!((marginal[1] - 0.5).abs() < IDENTITY_TOL);
    }

    #[test]
    fn zero_column_rejected_at_construction() {
        let err = DiscreteJoint::new(vec![vec![0.5, 0.0], vec![0.5, 0.0]], None).unwrap_err();
        assert!(err.to_string().contains("column 1"));
    }

    #[test]
    fn marginal_matches_brute_force_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let joint = random_joint(4, 5, false, &mut rng);
        let marginal = exact_marginal(&joint);
        // Independent summation in the transposed order.
        for k in 0..5 {
            let mut brute = 0.0;
            for j in 0..4 {
                brute += joint.p[j][k];
            }
            assert!((marginal[k] - brute).abs() < IDENTITY_TOL);
        }
    }

    #[test]
    fn gibbs_chain_converges_on_two_state_joint() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let empirical = gibbs_chain(&worked_joint(), 0, 100_000, 1_000, &mut rng).unwrap();
        let tv = total_variation(&empirical, &[0.5, 0.5]);
        assert!(tv < 0.02, "tv = {tv}");
    }

    #[test]
    fn degenerate_joint_keeps_chain_constant() {
        // All mass on (d0, c0) is not constructible (zero row/col), so use a
        // near-degenerate joint with the minimum off-mass allowed.
        let joint = DiscreteJoint::new(
            vec![vec![0.999_999, 1e-7], vec![4.5e-7, 4.5e-7]],
            None,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let empirical = gibbs_chain(&joint, 0, 20_000, 100, &mut rng).unwrap();
        assert!(empirical[0] > 0.99);
    }

    #[test]
    fn loss_conditional_matches_direct_evaluation() {
        let q = ModelConditional::new(vec![vec![0.8, 0.2], vec![0.2, 0.8]]).unwrap();
        // Entropy of [0.8, 0.2]: -(0.8 ln 0.8 + 0.2 ln 0.2).
        let entropy = -(0.8f64 * 0.8f64.ln() + 0.2 * 0.2f64.ln());
        assert!((loss_conditional(&q, 0, 0) - entropy).abs() < IDENTITY_TOL);
        assert!((loss_conditional(&q, 0, 0) - 0.500402).abs() < 1e-6);
        // Cross-entropy of [0.2, 0.8] against log [0.8, 0.2].
        let cross = -(0.2f64 * 0.8f64.ln() + 0.8 * 0.2f64.ln());
        assert!((loss_conditional(&q, 0, 1) - cross).abs() < IDENTITY_TOL);
        assert!((loss_conditional(&q, 0, 1) - 1.332179).abs() < 1e-6);
    }

    #[test]
    fn uniform_row_loss_is_log_num_codes() {
        let q = ModelConditional::new(vec![vec![0.25; 4], vec![0.25; 4]]).unwrap();
        assert!((loss_conditional(&q, 0, 1) - 4.0f64.ln()).abs() < IDENTITY_TOL);
    }

    #[test]
    fn loss_marginal_worked_example() {
        let q = ModelConditional::new(vec![vec![0.8, 0.2], vec![0.2, 0.8]]).unwrap();
        let value = loss_marginal(&q, &[0.5, 0.5], 0).unwrap();
        assert!((value - 0.916291).abs() < 1e-6);
        let by_expectation = 0.5 * loss_conditional(&q, 0, 0) + 0.5 * loss_conditional(&q, 0, 1);
        assert!((value - by_expectation).abs() < IDENTITY_TOL);
    }

    #[test]
    fn concentrated_description_distribution_degenerates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_conditional(3, 4, &mut rng);
        let value = loss_marginal(&q, &[0.0, 1.0, 0.0], 1).unwrap();
        assert!((value - loss_conditional(&q, 1, 1)).abs() < IDENTITY_TOL);
    }

    #[test]
    fn marginal_loss_dominates_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let q = random_conditional(4, 4, &mut rng);
            let p_d = random_description_distribution(4, &mut rng);
            let target = rng.gen_range(0..4);
            let marg = loss_marginal(&q, &p_d, target).unwrap();
            let cond = loss_conditional(&q, target, target);
            assert!(marg >= cond - IDENTITY_TOL, "marg={marg} cond={cond}");
        }
    }

    #[test]
    fn variance_decomposition_worked_example() {
        let d = variance_decomposition(&worked_joint()).unwrap();
        assert!((d.var_c - 0.25).abs() < IDENTITY_TOL);
        assert!((d.expected_cond_var - 0.16).abs() < IDENTITY_TOL);
        assert!((d.var_of_cond_mean - 0.09).abs() < IDENTITY_TOL);
    }

    #[test]
    fn independent_joint_has_zero_mean_variance() {
        // Rank-1 joint: p[j][k] = r[j] * c[k], so all conditionals match.
        let r = [0.3, 0.7];
        let c = [0.2, 0.5, 0.3];
        let p: Vec<Vec<f64>> = r
            .iter()
            .map(|&rj| c.iter().map(|&ck| rj * ck).collect())
            .collect();
        let joint = DiscreteJoint::new(p, Some(vec![1.0, 2.0, 4.0])).unwrap();
        let d = variance_decomposition(&joint).unwrap();
        assert!(d.var_of_cond_mean.abs() < IDENTITY_TOL);
        assert!((d.var_c - d.expected_cond_var).abs() < IDENTITY_TOL);
    }

    #[test]
    fn variance_decomposition_random_joints() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let joint = random_joint(3, 4, true, &mut rng);
            let d = variance_decomposition(&joint).unwrap();
            assert!(
                (d.var_c - d.expected_cond_var - d.var_of_cond_mean).abs() < IDENTITY_TOL,
                "{d:?}"
            );
            assert!(d.var_c >= d.expected_cond_var - IDENTITY_TOL);
        }
    }
}
