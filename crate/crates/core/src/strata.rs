//! Full-covariance Gaussian mixture over joint latents, giving soft cluster
//! memberships and the membership-weighted centre ("prior knowledge").

use rand::Rng;

use crate::checkpoint::Container;
use crate::error::{contract, Error, Result};
use crate::numcore::linalg::{cholesky, log_det_from_cholesky, solve_lower};
use crate::numcore::{log_sum_exp, stream_rng, Tensor};

/// Diagonal loading added to every covariance estimate.
pub const COVARIANCE_REG: f64 = 1e-6;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 200;

const LOG_2PI: f64 = 1.837_877_066_409_345_3;
const LLOYD_ROUNDS: usize = 25;
const KMEANS_RESTARTS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
struct Component {
    mean: Vec<f64>,
    chol: Vec<f64>,
    log_det: f64,
    weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FuzzyClustering {
    dim: usize,
    components: Vec<Component>,
    seed: u64,
    /// Log-likelihood after each E-step since the last component re-seed.
    pub trace: Vec<f64>,
    /// Number of components re-seeded during the fit.
    pub reseeds: usize,
}

/// Soft assignment of one point; entries sum to 1.
pub type MembershipVector = Vec<f64>;

fn check_points(x: &[Vec<f64>]) -> Result<usize> {
    let dim = x.first().map(Vec::len).unwrap_or(0);
    if dim == 0 {
        return Err(contract("mixture fit needs non-empty points"));
    }
    for p in x {
        if p.len() != dim {
            return Err(contract(format!(
                "point dimension {} differs from {dim}",
                p.len()
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(contract("mixture fit input contains non-finite values"));
        }
    }
    Ok(dim)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Best of several seeded k-means runs by within-cluster sum of squares.
fn kmeans_init(x: &[Vec<f64>], j: usize, seed: u64) -> Vec<usize> {
    (0..KMEANS_RESTARTS)
        .map(|r| kmeans_run(x, j, seed, r))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, labels)| labels)
        .expect("at least one restart")
}

/// One k-means++ seeding refined by Lloyd rounds; returns (inertia, labels).
fn kmeans_run(x: &[Vec<f64>], j: usize, seed: u64, restart: usize) -> (f64, Vec<usize>) {
    let mut rng = stream_rng(seed, &format!("gmm-init-{restart}"));
    let mut centres: Vec<Vec<f64>> = vec![x[rng.gen_range(0..x.len())].clone()];
    let mut d2: Vec<f64> = x.iter().map(|p| sq_dist(p, &centres[0])).collect();
    while centres.len() < j {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = x.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.gen_range(0..x.len())
        };
        centres.push(x[pick].clone());
        for (d, p) in d2.iter_mut().zip(x) {
            *d = d.min(sq_dist(p, centres.last().unwrap()));
        }
    }

    let mut labels = vec![0; x.len()];
    for _ in 0..LLOYD_ROUNDS {
        let mut changed = false;
        for (i, p) in x.iter().enumerate() {
            let best = (0..j)
                .min_by(|&a, &b| sq_dist(p, &centres[a]).total_cmp(&sq_dist(p, &centres[b])))
                .unwrap();
            changed |= labels[i] != best;
            labels[i] = best;
        }
        for (k, c) in centres.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = x
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == k)
                .map(|(p, _)| p)
                .collect();
            if members.is_empty() {
                continue;
            }
            for (d, v) in c.iter_mut().enumerate() {
                *v = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = x
        .iter()
        .zip(&labels)
        .map(|(p, &l)| sq_dist(p, &centres[l]))
        .sum();
    (inertia, labels)
}

fn regularized_factor(cov: &mut [f64], dim: usize) -> Result<Vec<f64>> {
    let mut extra = 0.0;
    for attempt in 0..8 {
        for d in 0..dim {
            cov[d * dim + d] += COVARIANCE_REG + extra;
        }
        match cholesky(cov, dim) {
            Ok(l) => return Ok(l),
            Err(_) if attempt < 7 => {
                for d in 0..dim {
                    cov[d * dim + d] -= COVARIANCE_REG + extra;
                }
                extra = if extra == 0.0 { 1e-9 } else { extra * 100.0 };
            }
            Err(e) => return Err(e),
        }
    }
    unreachable!()
}

/// Weighted mean and covariance (+ regularization) for one component.
fn fit_component(x: &[Vec<f64>], resp: &[f64], dim: usize) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let mass: f64 = resp.iter().sum();
    let mut mean = vec![0.0; dim];
    for (p, &r) in x.iter().zip(resp) {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += r * v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= mass);
    let mut cov = vec![0.0; dim * dim];
    let mut centred = vec![0.0; dim];
    for (p, &r) in x.iter().zip(resp) {
        if r == 0.0 {
            continue;
        }
        for ((c, v), m) in centred.iter_mut().zip(p).zip(&mean) {
            *c = v - m;
        }
        for a in 0..dim {
            let ra = r * centred[a];
            let row = &mut cov[a * dim..a * dim + a + 1];
            for (b, slot) in row.iter_mut().enumerate() {
                *slot += ra * centred[b];
            }
        }
    }
    for a in 0..dim {
        for b in 0..=a {
            let v = cov[a * dim + b] / mass;
            cov[a * dim + b] = v;
            cov[b * dim + a] = v;
        }
    }
    let chol = regularized_factor(&mut cov, dim)?;
    Ok((mean, chol, mass))
}

impl Component {
    fn log_density(&self, x: &[f64], dim: usize) -> f64 {
        let diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let z = solve_lower(&self.chol, &diff, dim);
        let maha: f64 = z.iter().map(|v| v * v).sum();
        -0.5 * (dim as f64 * LOG_2PI + self.log_det + maha)
    }
}

/// Expectation-maximisation fit of a `j`-component full-covariance mixture.
pub fn fit_gmm(
    x: &[Vec<f64>],
    j: usize,
    seed: u64,
    tol: f64,
    max_iter: usize,
) -> Result<FuzzyClustering> {
    if j == 0 {
        return Err(contract("cluster count must be >= 1"));
    }
    let dim = check_points(x)?;
    let s = x.len();
    if s < j {
        return Err(Error::Config(format!(
            "need at least {j} points for {j} clusters, got {s}"
        )));
    }

    let labels = kmeans_init(x, j, seed);
    let mut resp: Vec<Vec<f64>> = (0..j)
        .map(|k| {
            labels
                .iter()
                .map(|&l| if l == k { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let global = fit_component(x, &vec![1.0; s], dim)?;

    let mut model = FuzzyClustering {
        dim,
        components: Vec::with_capacity(j),
        seed,
        trace: Vec::new(),
        reseeds: 0,
    };
    let mut point_ll = vec![0.0f64; s];
    for iter in 0..=max_iter.max(1) {
        // M-step (the first pass turns the k-means labels into parameters).
        model.components.clear();
        let mut reseed = Vec::new();
        for (k, r) in resp.iter().enumerate() {
            let mass: f64 = r.iter().sum();
            if mass < 0.1 {
                reseed.push(k);
                model.components.push(Component {
                    mean: global.0.clone(),
                    chol: global.1.clone(),
                    log_det: 0.0,
                    weight: 0.0,
                });
                continue;
            }
            let (mean, chol, mass) = fit_component(x, r, dim)?;
            let log_det = log_det_from_cholesky(&chol, dim);
            model.components.push(Component {
                mean,
                chol,
                log_det,
                weight: mass / s as f64,
            });
        }
        if !reseed.is_empty() {
            // Dead components restart at the worst-explained points.
            let mut order: Vec<usize> = (0..s).collect();
            order.sort_by(|&a, &b| point_ll[a].total_cmp(&point_ll[b]));
            for (slot, &k) in reseed.iter().enumerate() {
                let c = &mut model.components[k];
                c.mean = x[order[slot % s]].clone();
                c.log_det = log_det_from_cholesky(&c.chol, dim);
                c.weight = 1.0 / s as f64;
            }
            let total: f64 = model.components.iter().map(|c| c.weight).sum();
            model.components.iter_mut().for_each(|c| c.weight /= total);
            model.reseeds += reseed.len();
            model.trace.clear();
        }

        // E-step.
        let mut ll = 0.0;
        for (i, p) in x.iter().enumerate() {
            let logp: Vec<f64> = model
                .components
                .iter()
                .map(|c| c.weight.ln() + c.log_density(p, dim))
                .collect();
            let lse = log_sum_exp(&logp);
            point_ll[i] = lse;
            ll += lse;
            for (k, lp) in logp.iter().enumerate() {
                resp[k][i] = (lp - lse).exp();
            }
        }
        if !ll.is_finite() {
            return Err(Error::Stage {
                stage: "clustering",
                cause: "log-likelihood became non-finite".into(),
            });
        }
        let converged =
            model.trace.last().is_some_and(|&prev| ll - prev < tol) && reseed.is_empty();
        model.trace.push(ll);
        if converged || iter == max_iter || model.reseeds > 10 * j {
            break;
        }
    }
    Ok(model)
}

impl FuzzyClustering {
    pub fn clusters(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn centre(&self, k: usize) -> &[f64] {
        &self.components[k].mean
    }

    pub fn centres(&self) -> Vec<&[f64]> {
        self.components.iter().map(|c| c.mean.as_slice()).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    /// Covariance `L L^T` of component `k`, row-major.
    pub fn covariance(&self, k: usize) -> Vec<f64> {
        let (l, d) = (&self.components[k].chol, self.dim);
        let mut cov = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..=a {
                let v: f64 = (0..=b).map(|m| l[a * d + m] * l[b * d + m]).sum();
                cov[a * d + b] = v;
                cov[b * d + a] = v;
            }
        }
        cov
    }

    /// Total log-likelihood of the data under the fitted mixture.
    pub fn final_log_likelihood(&self) -> Option<f64> {
        self.trace.last().copied()
    }

    /// True when no E-step lowered the log-likelihood by more than `tol`
    /// (scaled by the magnitude of the values compared).
    pub fn trace_is_monotone(&self, tol: f64) -> bool {
        self.trace
            .windows(2)
            .all(|w| w[1] - w[0] >= -tol * w[0].abs().max(1.0))
    }

    /// Posterior responsibilities for `x`.
    pub fn membership(&self, x: &[f64]) -> Result<MembershipVector> {
        if x.len() != self.dim {
            return Err(contract(format!(
                "membership input has dim {}, model expects {}",
                x.len(),
                self.dim
            )));
        }
        let logp: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight.ln() + c.log_density(x, self.dim))
            .collect();
        let lse = log_sum_exp(&logp);
        if !lse.is_finite() {
            return Err(contract(
                "membership input has zero density under every component",
            ));
        }
        let p: Vec<f64> = logp.iter().map(|l| (l - lse).exp()).collect();
        let total: f64 = p.iter().sum();
        Ok(p.into_iter().map(|v| v / total).collect())
    }

    pub fn hard_assignment(&self, x: &[f64]) -> Result<usize> {
        let p = self.membership(x)?;
        Ok(argmax(&p))
    }

    /// Membership-weighted sum of the cluster centres.
    pub fn prior_knowledge(&self, weights: &[f64]) -> Result<Vec<f64>> {
        if weights.len() != self.components.len() {
            return Err(contract(format!(
                "expected {} weights, got {}",
                self.components.len(),
                weights.len()
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-6 || weights.iter().any(|&w| w < -1e-6 || !w.is_finite()) {
            return Err(contract(format!(
                "weights are not on the simplex (sum {total})"
            )));
        }
        let mut out = vec![0.0; self.dim];
        for (c, &w) in self.components.iter().zip(weights) {
            for (o, m) in out.iter_mut().zip(&c.mean) {
                *o += w * m;
            }
        }
        Ok(out)
    }

    pub fn save(&self, prefix: &str, out: &mut Container) {
        let (j, d) = (self.clusters(), self.dim);
        out.put_meta(&format!("{prefix}.j"), j);
        out.put_meta(&format!("{prefix}.dim"), d);
        out.put_meta(&format!("{prefix}.seed"), self.seed);
        out.put_meta(&format!("{prefix}.reseeds"), self.reseeds);
        let means = self
            .components
            .iter()
            .flat_map(|c| c.mean.iter().copied())
            .collect();
        out.put_tensor(&format!("{prefix}.centres"), &Tensor::matrix(j, d, means));
        let chol = self
            .components
            .iter()
            .flat_map(|c| c.chol.iter().copied())
            .collect();
        out.put_tensor(
            &format!("{prefix}.cholesky"),
            &Tensor::new(vec![j, d, d], chol).expect("shape"),
        );
        out.put_tensor(
            &format!("{prefix}.weights"),
            &Tensor::vector(self.weights()),
        );
        out.put_tensor(
            &format!("{prefix}.trace"),
            &Tensor::vector(self.trace.clone()),
        );
    }

    pub fn load(prefix: &str, src: &Container) -> Result<Self> {
        let j: usize = src.meta_parse(&format!("{prefix}.j"))?;
        let dim: usize = src.meta_parse(&format!("{prefix}.dim"))?;
        let seed: u64 = src.meta_parse(&format!("{prefix}.seed"))?;
        let reseeds: usize = src.meta_parse(&format!("{prefix}.reseeds"))?;
        let means = src.tensor(&format!("{prefix}.centres"))?;
        let chol = src.tensor(&format!("{prefix}.cholesky"))?;
        let weights = src.tensor(&format!("{prefix}.weights"))?;
        let trace = src.tensor(&format!("{prefix}.trace"))?.into_data();
        if means.shape() != [j, dim] || chol.shape() != [j, dim, dim] || weights.len() != j {
            return Err(Error::Checkpoint(format!(
                "{prefix}: inconsistent mixture shapes"
            )));
        }
        let components = (0..j)
            .map(|k| {
                let l = chol.data()[k * dim * dim..(k + 1) * dim * dim].to_vec();
                Component {
                    mean: means.data()[k * dim..(k + 1) * dim].to_vec(),
                    log_det: log_det_from_cholesky(&l, dim),
                    chol: l,
                    weight: weights.data()[k],
                }
            })
            .collect();
        Ok(Self {
            dim,
            components,
            seed,
            trace,
            reseeds,
        })
    }
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(means: &[[f64; 2]], per: usize, sd: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream_rng(seed, "blobs");
        let n = Normal::new(0.0, sd).unwrap();
        let mut out = Vec::new();
        for _ in 0..per {
            for m in means {
                out.push(vec![m[0] + n.sample(&mut rng), m[1] + n.sample(&mut rng)]);
            }
        }
        out
    }

    #[test]
    fn single_component_is_sample_moments() {
        let x = blobs(&[[1.0, -2.0]], 50, 0.7, 1);
        let m = fit_gmm(&x, 1, 0, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let n = x.len() as f64;
        let mean: Vec<f64> = (0..2)
            .map(|d| x.iter().map(|p| p[d]).sum::<f64>() / n)
            .collect();
        for d in 0..2 {
            assert!((m.centre(0)[d] - mean[d]).abs() < 1e-12);
        }
        let cov = m.covariance(0);
        for a in 0..2 {
            for b in 0..2 {
                let mut want = x
                    .iter()
                    .map(|p| (p[a] - mean[a]) * (p[b] - mean[b]))
                    .sum::<f64>()
                    / n;
                if a == b {
                    want += COVARIANCE_REG;
                }
                assert!((cov[a * 2 + b] - want).abs() < 1e-12);
            }
        }
        assert_eq!(m.membership(&[100.0, 100.0]).unwrap(), vec![1.0]);
        assert_eq!(m.prior_knowledge(&[1.0]).unwrap(), m.centre(0).to_vec());
    }

    #[test]
    fn errors() {
        let x = blobs(&[[0.0, 0.0]], 3, 1.0, 2);
        assert!(fit_gmm(&x, 4, 0, 1e-6, 10).is_err());
        assert!(fit_gmm(&x, 0, 0, 1e-6, 10).is_err());
        let bad = vec![vec![0.0, f64::NAN], vec![1.0, 1.0]];
        assert!(fit_gmm(&bad, 1, 0, 1e-6, 10).is_err());
        let m = fit_gmm(&x, 1, 0, 1e-6, 10).unwrap();
        assert!(m.membership(&[0.0]).is_err());
        assert!(m.prior_knowledge(&[0.5]).is_err());
    }

    #[test]
    fn separated_centre_gets_its_membership() {
        let truth = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let x = blobs(&truth, 100, 1.0, 3);
        let m = fit_gmm(&x, 3, 7, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        for k in 0..3 {
            let p = m.membership(m.centre(k)).unwrap();
            assert!(p[k] > 0.99, "{p:?}");
        }
        let uniform = m.prior_knowledge(&[1.0 / 3.0; 3]).unwrap();
        for d in 0..2 {
            let mean = (0..3).map(|k| m.centre(k)[d]).sum::<f64>() / 3.0;
            assert!((uniform[d] - mean).abs() < 1e-12);
        }
        assert!(m.trace_is_monotone(1e-9));
    }

    #[test]
    fn save_load_round_trip() {
        let x = blobs(&[[0.0, 0.0], [5.0, 5.0]], 20, 1.0, 4);
        let m = fit_gmm(&x, 2, 1, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let mut c = Container::new();
        m.save("gmm", &mut c);
        let back =
            FuzzyClustering::load("gmm", &Container::from_bytes(&c.to_bytes()).unwrap()).unwrap();
        assert_eq!(
            back.membership(&[1.0, 2.0]).unwrap(),
            m.membership(&[1.0, 2.0]).unwrap()
        );
    }
}
