//! Instance constructors: the hard family, tabular data files, random
//! instances, and empirical context distributions.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, RngExt};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, SclbError};
use crate::model::{check_probability_vector, BanditInstance, RewardSource};

/// The hard instance with `d` contexts, `A` actions and unit Gaussian noise.
///
/// 0-based layout: `phi(x, 0) = e_x`, `phi(x, a >= 1) = e_0`,
/// `theta*_i = 1[i != 0]`, `p(0) = 1 - (d-1)/d^2`, `p(x != 0) = 1/d^2`.
/// In the usual 1-based statement these are context `x + 1` and action `a + 1`,
/// so the optimal policy plays action 0 everywhere.
pub fn hard_instance(d: usize, n_actions: usize) -> Result<BanditInstance> {
    hard_instance_with_noise(d, n_actions, 1.0)
}

/// [`hard_instance`] with a configurable noise standard deviation.
pub fn hard_instance_with_noise(d: usize, n_actions: usize, noise_std: f64) -> Result<BanditInstance> {
    if d == 0 {
        return Err(SclbError::Domain("hard instance needs d >= 1".into()));
    }
    if n_actions < 2 {
        return Err(SclbError::Domain("hard instance needs at least two actions".into()));
    }
    let mut columns = DMatrix::zeros(d, d * n_actions);
    for x in 0..d {
        columns[(x, x * n_actions)] = 1.0;
        for a in 1..n_actions {
            columns[(0, x * n_actions + a)] = 1.0;
        }
    }
    let dd = (d * d) as f64;
    let mut p = vec![1.0 / dd; d];
    p[0] = 1.0 - (d as f64 - 1.0) / dd;
    let theta_star = DVector::from_fn(d, |i, _| if i == 0 { 0.0 } else { 1.0 });
    BanditInstance::from_columns(
        d,
        n_actions,
        columns,
        p,
        RewardSource::Linear {
            theta_star,
            noise_std,
        },
    )
}

/// Random linear instance with standard normal features and parameter,
/// and a context distribution drawn uniformly from the simplex.
pub fn random_instance<R: Rng + ?Sized>(
    dim: usize,
    n_contexts: usize,
    n_actions: usize,
    noise_std: f64,
    rng: &mut R,
) -> Result<BanditInstance> {
    if n_contexts * n_actions < dim {
        return Err(SclbError::Domain(format!(
            "{n_contexts} x {n_actions} pairs cannot span R^{dim}"
        )));
    }
    let columns = DMatrix::from_fn(dim, n_contexts * n_actions, |_, _| {
        StandardNormal.sample(&mut *rng)
    });
    let exp: Vec<f64> = (0..n_contexts)
        .map(|_| -(1.0 - rng.random::<f64>()).ln())
        .collect();
    let total: f64 = exp.iter().sum();
    let p: Vec<f64> = exp.iter().map(|v| v / total).collect();
    let p = renormalize(p);
    let theta_star = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut *rng));
    BanditInstance::from_columns(
        n_contexts,
        n_actions,
        columns,
        p,
        RewardSource::Linear {
            theta_star,
            noise_std,
        },
    )
}

/// Loads a tabular instance from a features file and a rewards file.
///
/// Features: header row, one row per context, numeric columns `psi(x)`; an
/// optional column named `p` holds unnormalized context weights (uniform
/// otherwise). Rewards: header row, one row per context, one column per
/// action. Pair features are the disjoint lift `phi(x, a) = e_a (x) psi(x)`
/// (action-block `a` holds `psi(x)`), normalized to unit maximum norm.
pub fn load_tabular(features: &Path, rewards: &Path) -> Result<BanditInstance> {
    let feat = read_numeric_csv(features)?;
    let rew = read_numeric_csv(rewards)?;
    if feat.rows.len() != rew.rows.len() {
        return Err(SclbError::Load(format!(
            "{} has {} data rows but {} has {}",
            features.display(),
            feat.rows.len(),
            rewards.display(),
            rew.rows.len()
        )));
    }
    if feat.rows.is_empty() {
        return Err(SclbError::Load(format!("{} has no data rows", features.display())));
    }
    let p_col = feat.header.iter().position(|h| h.trim() == "p");
    let psi_cols: Vec<usize> = (0..feat.header.len()).filter(|&c| Some(c) != p_col).collect();
    if psi_cols.is_empty() {
        return Err(SclbError::Load(format!("{} has no feature columns", features.display())));
    }
    let n_contexts = feat.rows.len();
    let n_actions = rew.header.len();
    let k = psi_cols.len();
    let psi = DMatrix::from_fn(n_contexts, k, |x, c| feat.rows[x][psi_cols[c]]);
    let table = DMatrix::from_fn(n_contexts, n_actions, |x, a| rew.rows[x][a]);

    let p = match p_col {
        Some(c) => {
            let w: Vec<f64> = feat.rows.iter().map(|r| r[c]).collect();
            if let Some(x) = w.iter().position(|v| *v < 0.0) {
                return Err(SclbError::Load(format!(
                    "{}: row {}, column 'p': weight must be nonnegative",
                    features.display(),
                    x + 2
                )));
            }
            let total: f64 = w.iter().sum();
            if !(total > 0.0) {
                return Err(SclbError::Load(format!(
                    "{}: column 'p' sums to zero",
                    features.display()
                )));
            }
            renormalize(w.iter().map(|v| v / total).collect())
        }
        None => vec![1.0 / n_contexts as f64; n_contexts],
    };

    let columns = lift_disjoint(&psi, n_actions);
    let instance = BanditInstance::from_columns(
        n_contexts,
        n_actions,
        columns,
        p,
        RewardSource::Tabular { table },
    )
    .map_err(|e| match e {
        SclbError::Infeasible(msg) => SclbError::Load(format!(
            "{}: context features are rank deficient ({msg}); drop collinear columns",
            features.display()
        )),
        SclbError::Domain(msg) => SclbError::Load(format!("{}: {msg}", features.display())),
        other => other,
    })?;
    Ok(instance.normalized())
}

/// `d x (n_contexts * n_actions)` columns with `phi(x, a) = e_a (x) psi(x)`.
fn lift_disjoint(psi: &DMatrix<f64>, n_actions: usize) -> DMatrix<f64> {
    let (n_contexts, k) = psi.shape();
    let mut cols = DMatrix::zeros(k * n_actions, n_contexts * n_actions);
    for x in 0..n_contexts {
        for a in 0..n_actions {
            for c in 0..k {
                cols[(a * k + c, x * n_actions + a)] = psi[(x, c)];
            }
        }
    }
    cols
}

struct NumericCsv {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_numeric_csv(path: &Path) -> Result<NumericCsv> {
    let name = path.display();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| SclbError::Load(format!("{name}: {e}")))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| SclbError::Load(format!("{name}: {e}")))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.is_empty() || header.iter().all(|h| h.trim().is_empty()) {
        return Err(SclbError::Load(format!("{name}: missing header row")));
    }
    if header.iter().all(|h| h.trim().parse::<f64>().is_ok()) {
        return Err(SclbError::Load(format!(
            "{name}: missing header row (row 1 is entirely numeric)"
        )));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| SclbError::Load(format!("{name}: row {line}: {e}")))?;
        if record.len() != header.len() {
            return Err(SclbError::Load(format!(
                "{name}: row {line} has {} fields, header has {}",
                record.len(),
                header.len()
            )));
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                let v: f64 = cell.trim().parse().map_err(|_| {
                    SclbError::Load(format!(
                        "{name}: row {line}, column '{}': cannot parse '{cell}' as a number",
                        header[c]
                    ))
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(SclbError::Load(format!(
                        "{name}: row {line}, column '{}': non-finite value '{cell}'",
                        header[c]
                    )))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(NumericCsv { header, rows })
}

/// `sigmoid(R G)` with `G` a `ratings.ncols() x target_dim` standard normal matrix.
///
/// Outputs are clamped into the open unit interval, which the sigmoid
/// leaves in exact arithmetic but not in floating point.
pub fn jester_transform<R: Rng + ?Sized>(
    ratings: &DMatrix<f64>,
    target_dim: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if ratings.ncols() == 0 || target_dim == 0 {
        return Err(SclbError::Shape(
            "ratings and target dimension must be nonempty".into(),
        ));
    }
    if ratings.iter().any(|v| !v.is_finite()) {
        return Err(SclbError::Domain("ratings must be finite".into()));
    }
    let g = DMatrix::from_fn(ratings.ncols(), target_dim, |_, _| {
        StandardNormal.sample(&mut *rng)
    });
    let below_one = 1.0 - f64::EPSILON / 2.0;
    Ok((ratings * g).map(|z| (1.0 / (1.0 + (-z).exp())).clamp(f64::MIN_POSITIVE, below_one)))
}

/// Empirical frequencies of `m` i.i.d. draws from the instance's context distribution.
pub fn empirical_context_dist<R: Rng + ?Sized>(
    instance: &BanditInstance,
    m: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(SclbError::Domain("need at least one context sample".into()));
    }
    let sampler = WeightedIndex::new(instance.context_dist())
        .map_err(|e| SclbError::Domain(format!("context distribution: {e}")))?;
    let mut counts = vec![0usize; instance.n_contexts()];
    for _ in 0..m {
        counts[sampler.sample(rng)] += 1;
    }
    Ok(counts.iter().map(|&c| c as f64 / m as f64).collect())
}

/// `ceil(36 d^2 ln(2d / delta))` context samples.
pub fn recommended_context_samples(d: usize, delta: f64) -> Result<usize> {
    if d == 0 || !(delta > 0.0 && delta < 1.0) {
        return Err(SclbError::Domain(format!(
            "need d >= 1 and delta in (0, 1), got d = {d}, delta = {delta}"
        )));
    }
    let d = d as f64;
    Ok((36.0 * d * d * (2.0 * d / delta).ln()).ceil() as usize)
}

/// `(1/2) sum |p - q|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(SclbError::Shape(format!(
            "distributions have lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    check_probability_vector("p", p)?;
    check_probability_vector("q", q)?;
    Ok((0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()).min(1.0))
}

/// Divides by the sum again so that rounding leaves the vector on the simplex.
fn renormalize(mut v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::simple_regret;
    use crate::seed;
    use approx::assert_relative_eq;
    use std::io::Write;

    #[test]
    fn hard_instance_d2() {
        let inst = hard_instance(2, 2).unwrap();
        assert_eq!(inst.context_dist(), &[0.75, 0.25]);
        let RewardSource::Linear { theta_star, noise_std } = inst.reward_source() else {
            unreachable!()
        };
        assert_eq!(theta_star.as_slice(), &[0.0, 1.0]);
        assert_eq!(*noise_std, 1.0);
        assert_eq!(inst.feature(1, 0).unwrap().as_slice(), &[0.0, 1.0]);
        assert_eq!(inst.feature(0, 1).unwrap().as_slice(), &[1.0, 0.0]);
        let opt = inst.optimal_policy();
        assert_eq!(opt.actions(), &[0, 0]);
        assert_eq!(simple_regret(&inst, &opt).unwrap(), 0.0);
    }

    #[test]
    fn hard_instance_features_are_basis_vectors() {
        for d in [1, 2, 5, 10, 50] {
            let inst = hard_instance(d, 3).unwrap();
            let total: f64 = inst.context_dist().iter().sum();
            assert_relative_eq!(total, 1.0, epsilon = 1e-12);
            for j in 0..inst.n_pairs() {
                let f = inst.pair_feature(j);
                assert_eq!(f.iter().filter(|v| **v == 1.0).count(), 1);
                assert_eq!(f.iter().filter(|v| **v == 0.0).count(), d - 1);
            }
        }
        assert!(hard_instance(3, 1).is_err());
        assert!(hard_instance(0, 2).is_err());
    }

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn tabular_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(dir.path(), "f.csv", "u,v\n1,0\n0,2\n");
        let r = write(dir.path(), "r.csv", "a0,a1\n1,0\n0.5,1\n");
        let inst = load_tabular(&f, &r).unwrap();
        assert_eq!(inst.n_contexts(), 2);
        assert_eq!(inst.n_actions(), 2);
        assert_eq!(inst.dim(), 4);
        assert_eq!(inst.context_dist(), &[0.5, 0.5]);
        assert_relative_eq!(inst.feature_bound(), 1.0, epsilon = 1e-15);
        assert_eq!(inst.feature(1, 1).unwrap().as_slice(), &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(inst.feature(0, 0).unwrap().as_slice(), &[0.5, 0.0, 0.0, 0.0]);
        assert_eq!(inst.mean_reward(1, 0), 0.5);
        let mut rng = seed::rng(1, &[]);
        assert_eq!(inst.sample_reward(1, 0, &mut rng), 0.5);
    }

    #[test]
    fn tabular_keeps_duplicates_and_reads_weights() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(dir.path(), "f.csv", "u,v,p\n1,0,1\n1,0,1\n0,1,2\n");
        let r = write(dir.path(), "r.csv", "a0\n1\n1\n0\n");
        let inst = load_tabular(&f, &r).unwrap();
        assert_eq!(inst.n_contexts(), 3);
        assert_eq!(inst.context_dist(), &[0.25, 0.25, 0.5]);
    }

    #[test]
    fn tabular_errors_name_location() {
        let dir = tempfile::tempdir().unwrap();
        let good_r = write(dir.path(), "r.csv", "a0,a1\n1,0\n0,1\n");
        let no_header = write(dir.path(), "nh.csv", "1,0\n0,1\n");
        let err = load_tabular(&no_header, &good_r).unwrap_err().to_string();
        assert!(err.contains("missing header"), "{err}");

        let nan = write(dir.path(), "nan.csv", "u,v\n1,0\n0,NaN\n");
        let err = load_tabular(&nan, &good_r).unwrap_err().to_string();
        assert!(err.contains("row 3") && err.contains("'v'"), "{err}");

        let ragged = write(dir.path(), "rg.csv", "u,v\n1,0\n0\n");
        let err = load_tabular(&ragged, &good_r).unwrap_err().to_string();
        assert!(err.contains("row 3"), "{err}");

        let short = write(dir.path(), "s.csv", "u,v\n1,0\n");
        let err = load_tabular(&short, &good_r).unwrap_err().to_string();
        assert!(err.contains("data rows"), "{err}");

        let missing = dir.path().join("absent.csv");
        assert!(matches!(load_tabular(&missing, &good_r), Err(SclbError::Load(_))));
    }

    #[test]
    fn jester_examples() {
        let ratings = DMatrix::from_fn(4, 95, |i, j| if i == 0 { 0.0 } else { ((i * j) % 7) as f64 - 3.0 });
        let mut rng = seed::rng(5, &[seed::stream::PROJECTION]);
        let out = jester_transform(&ratings, 30, &mut rng).unwrap();
        assert_eq!(out.shape(), (4, 30));
        assert!(out.row(0).iter().all(|v| *v == 0.5));
        assert!(out.iter().all(|v| *v > 0.0 && *v < 1.0));
        let mut rng = seed::rng(5, &[seed::stream::PROJECTION]);
        assert_eq!(out, jester_transform(&ratings, 30, &mut rng).unwrap());
    }

    #[test]
    fn empirical_dist_examples() {
        let inst = hard_instance(5, 2).unwrap();
        let mut rng = seed::rng(11, &[]);
        let one = empirical_context_dist(&inst, 1, &mut rng).unwrap();
        assert_eq!(one.iter().filter(|v| **v == 1.0).count(), 1);
        let big = empirical_context_dist(&inst, 1_000_000, &mut rng).unwrap();
        assert!(tv_distance(inst.context_dist(), &big).unwrap() < 0.01);

        let point = inst.with_context_dist(vec![0.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        let est = empirical_context_dist(&point, 37, &mut rng).unwrap();
        assert_eq!(est, point.context_dist());
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_distance(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_relative_eq!(tv_distance(&[0.75, 0.25], &[0.5, 0.5]).unwrap(), 0.25);
    }

    #[test]
    fn recommended_samples() {
        // 36 * 4 * ln(40) = 531.19...
        assert_eq!(recommended_context_samples(2, 0.1).unwrap(), 532);
    }
}
