//! Expectation-maximization for univariate Gaussian mixtures.

use rand::Rng;
use rayon::prelude::*;

use super::{bic, FitConfig, FitError, MixtureFit, VarianceFamily};
use crate::seed;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Per-start log-likelihood traces of one `em_fit` call.
#[derive(Debug, Clone, Default)]
pub struct EmTrace {
    /// `starts[s][i]` is the log-likelihood after `i` M-steps of start `s`.
    pub starts: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct Params {
    means: Vec<f64>,
    vars: Vec<f64>,
    weights: Vec<f64>,
}

struct Run {
    params: Params,
    loglik: f64,
    converged: bool,
    iterations: usize,
}

/// Fits a `g`-component mixture of `family` by multi-start EM and returns
/// the start with the highest log-likelihood, preferring converged starts.
pub fn em_fit(
    lengths: &[f64],
    g: usize,
    family: VarianceFamily,
    cfg: &FitConfig,
) -> Result<MixtureFit, FitError> {
    em_fit_inner(lengths, g, family, cfg, None)
}

pub fn em_fit_traced(
    lengths: &[f64],
    g: usize,
    family: VarianceFamily,
    cfg: &FitConfig,
) -> Result<(MixtureFit, EmTrace), FitError> {
    let mut trace = EmTrace::default();
    let fit = em_fit_inner(lengths, g, family, cfg, Some(&mut trace))?;
    Ok((fit, trace))
}

/// Every feasible (family, g) candidate for `lengths`, V before E, g ascending.
pub fn fit_candidates(lengths: &[f64], cfg: &FitConfig) -> Result<Vec<MixtureFit>, FitError> {
    let specs: Vec<(VarianceFamily, usize)> = [VarianceFamily::V, VarianceFamily::E]
        .into_iter()
        .flat_map(|f| (1..=cfg.g_max).map(move |g| (f, g)))
        .filter(|&(_, g)| lengths.len() >= min_points(g))
        .collect();
    let out: Vec<MixtureFit> = specs
        .par_iter()
        .map(|&(family, g)| em_fit(lengths, g, family, cfg))
        .collect::<Result<_, _>>()?;
    if out.is_empty() {
        return Err(FitError::TooFewValues { needed: min_points(1), got: lengths.len() });
    }
    Ok(out)
}

fn min_points(g: usize) -> usize {
    (2 * g).max(g + 1)
}

fn em_fit_inner(
    lengths: &[f64],
    g: usize,
    family: VarianceFamily,
    cfg: &FitConfig,
    mut trace: Option<&mut EmTrace>,
) -> Result<MixtureFit, FitError> {
    if g == 0 {
        return Err(FitError::NoComponents);
    }
    if lengths.len() < min_points(g) {
        return Err(FitError::TooFewValues { needed: min_points(g), got: lengths.len() });
    }
    if lengths.iter().any(|x| !x.is_finite()) {
        return Err(FitError::NonFinite);
    }

    let n = lengths.len();
    let mut sorted = lengths.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = lengths.iter().sum::<f64>() / n as f64;
    let sd = (lengths.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let spread = sd / g as f64;

    let base_means: Vec<f64> = (0..g)
        .map(|k| quantile_sorted(&sorted, (k as f64 + 0.5) / g as f64))
        .collect();
    let base_var = (spread * spread).max(cfg.var_floor);

    let mut rng = seed::rng(cfg.seed, &[b"em", family.as_str().as_bytes(), &(g as u64).to_le_bytes()]);
    // EM runs on standardized lengths so the stopping rule is scale free;
    // parameters are mapped back before `finish`
    let scale = if sd > 0.0 { sd } else { 1.0 };
    let z: Vec<f64> = lengths.iter().map(|x| (x - mean) / scale).collect();
    let z_cfg = FitConfig { var_floor: cfg.var_floor / (scale * scale), ..*cfg };
    let ll_shift = n as f64 * scale.ln();
    let mut best: Option<Run> = None;

    for start in 0..cfg.n_starts.max(1) {
        let means = match start {
            0 => base_means.clone(),
            s if s % 2 == 1 => spread_seeds(&sorted, g, &mut rng),
            _ => (0..g)
                .map(|k| {
                    let u: f64 = rng.random();
                    quantile_sorted(&sorted, (k as f64 + u) / g as f64)
                })
                .collect(),
        };
        let init = Params {
            means: means.iter().map(|m| (m - mean) / scale).collect(),
            vars: vec![base_var / (scale * scale); g],
            weights: vec![1.0 / g as f64; g],
        };
        let (run, lls) = run_em(&z, init, family, &z_cfg);
        if let Some(t) = trace.as_deref_mut() {
            t.starts.push(lls.iter().map(|l| l - ll_shift).collect());
        }
        if !run.loglik.is_finite() {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => {
                (run.converged && !b.converged) || (run.converged == b.converged && run.loglik > b.loglik)
            }
        };
        if better {
            best = Some(run);
        }
    }

    let mut run = best.ok_or(FitError::NonFinite)?;
    run.params.means.iter_mut().for_each(|m| *m = *m * scale + mean);
    run.params.vars.iter_mut().for_each(|v| *v = (*v * scale * scale).max(cfg.var_floor));
    Ok(finish(lengths, run, family, cfg))
}

fn finish(lengths: &[f64], run: Run, family: VarianceFamily, cfg: &FitConfig) -> MixtureFit {
    let n = lengths.len();
    let g = run.params.means.len();
    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| run.params.means[a].total_cmp(&run.params.means[b]));
    let params = Params {
        means: order.iter().map(|&k| run.params.means[k]).collect(),
        vars: order.iter().map(|&k| run.params.vars[k]).collect(),
        weights: order.iter().map(|&k| run.params.weights[k]).collect(),
    };
    let loglik = mixture_loglik(lengths, &params.means, &params.vars.iter().map(|v| v.sqrt()).collect::<Vec<_>>(), &params.weights);

    let scale = params.means.iter().fold(1.0f64, |a, m| a.max(m.abs()));
    let degenerate = params.weights.iter().any(|&w| w < 1.0 / n as f64)
        || params.vars.iter().any(|&v| v <= cfg.var_floor * (1.0 + 1e-9))
        || params.means.windows(2).any(|w| w[1] - w[0] <= 1e-9 * scale);

    MixtureFit {
        family,
        g,
        sds: params.vars.iter().map(|v| v.sqrt()).collect(),
        means: params.means,
        raw_weights: params.weights,
        loglik,
        bic: bic(loglik, g, family, n),
        n,
        converged: run.converged,
        iterations: run.iterations,
        degenerate,
    }
}

fn run_em(x: &[f64], mut p: Params, family: VarianceFamily, cfg: &FitConfig) -> (Run, Vec<f64>) {
    let mut stats = Stats::new(p.means.len());
    let mut ll = e_step(x, &p, &mut stats);
    let mut lls = vec![ll];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter && ll.is_finite() {
        m_step(&mut p, &stats, family, cfg.var_floor, x.len());
        iterations += 1;
        let next = e_step(x, &p, &mut stats);
        lls.push(next);
        let change = (next - ll).abs();
        ll = next;
        if change < cfg.tol * next.abs() {
            converged = true;
            break;
        }
    }

    (Run { params: p, loglik: ll, converged, iterations }, lls)
}

/// Responsibility-weighted sums per component: count, first and second moments.
struct Stats {
    nk: Vec<f64>,
    sx: Vec<f64>,
    sxx: Vec<f64>,
}

impl Stats {
    fn new(g: usize) -> Self {
        Stats { nk: vec![0.0; g], sx: vec![0.0; g], sxx: vec![0.0; g] }
    }
}

/// Accumulates the posterior-weighted sums the next M-step needs and returns
/// the log-likelihood of `p`. `x` should be centered so the second moments
/// keep their precision.
fn e_step(x: &[f64], p: &Params, stats: &mut Stats) -> f64 {
    let g = p.means.len();
    let consts: Vec<f64> = (0..g)
        .map(|k| p.weights[k].ln() - 0.5 * (LN_2PI + p.vars[k].ln()))
        .collect();
    let half_prec: Vec<f64> = p.vars.iter().map(|v| 0.5 / v).collect();
    for v in [&mut stats.nk, &mut stats.sx, &mut stats.sxx] {
        v.iter_mut().for_each(|s| *s = 0.0);
    }
    let mut row = vec![0.0; g];
    let mut ll = 0.0;
    // each row sum lies in [1, g], so a block product cannot overflow
    let mut product = 1.0;
    for (i, &xi) in x.iter().enumerate() {
        let mut max = f64::NEG_INFINITY;
        let mut top = 0;
        for k in 0..g {
            let d = xi - p.means[k];
            row[k] = consts[k] - half_prec[k] * d * d;
            if row[k] > max {
                max = row[k];
                top = k;
            }
        }
        if max == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let mut sum = 0.0;
        for (k, r) in row.iter_mut().enumerate() {
            let t = *r - max;
            // the largest term is exactly one; terms below half an ulp of
            // the row sum are dropped
            *r = if k == top {
                1.0
            } else if t < -40.0 {
                0.0
            } else {
                t.exp()
            };
            sum += *r;
        }
        let inv = 1.0 / sum;
        for k in 0..g {
            let r = row[k] * inv;
            stats.nk[k] += r;
            stats.sx[k] += r * xi;
            stats.sxx[k] += r * xi * xi;
        }
        ll += max;
        product *= sum;
        if i % 32 == 31 {
            ll += product.ln();
            product = 1.0;
        }
    }
    ll + product.ln()
}

fn m_step(p: &mut Params, stats: &Stats, family: VarianceFamily, var_floor: f64, n: usize) {
    let g = p.means.len();
    let n = n as f64;
    let mut ss = vec![0.0; g];
    for k in 0..g {
        let nk = stats.nk[k];
        p.weights[k] = nk / n;
        // an emptied component keeps its location and spread
        if nk > 0.0 {
            let m = stats.sx[k] / nk;
            p.means[k] = m;
            ss[k] = (stats.sxx[k] - nk * m * m).max(0.0);
        }
    }
    match family {
        VarianceFamily::V => {
            for k in 0..g {
                if stats.nk[k] > 0.0 {
                    p.vars[k] = (ss[k] / stats.nk[k]).max(var_floor);
                }
            }
        }
        VarianceFamily::E => {
            let pooled = (ss.iter().sum::<f64>() / n).max(var_floor);
            p.vars.iter_mut().for_each(|v| *v = pooled);
        }
    }
}

/// Log-likelihood of a mixture given means, standard deviations and weights.
pub fn mixture_loglik(x: &[f64], means: &[f64], sds: &[f64], weights: &[f64]) -> f64 {
    let g = means.len();
    let consts: Vec<f64> = (0..g)
        .map(|k| weights[k].ln() - sds[k].ln() - 0.5 * LN_2PI)
        .collect();
    x.iter()
        .map(|&xi| {
            let terms: Vec<f64> = (0..g)
                .map(|k| {
                    let z = (xi - means[k]) / sds[k];
                    consts[k] - 0.5 * z * z
                })
                .collect();
            let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return max;
            }
            max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
        })
        .sum()
}

/// Picks `g` data points, each drawn with probability proportional to its
/// squared distance from the points already picked.
fn spread_seeds<R: Rng>(sorted: &[f64], g: usize, rng: &mut R) -> Vec<f64> {
    let mut seeds = vec![sorted[rng.random_range(0..sorted.len())]];
    let mut d2: Vec<f64> = sorted.iter().map(|x| (x - seeds[0]).powi(2)).collect();
    while seeds.len() < g {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = sorted.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                target -= d;
                if target <= 0.0 && *d > 0.0 {
                    pick = i;
                    break;
                }
            }
            sorted[pick]
        } else {
            sorted[rng.random_range(0..sorted.len())]
        };
        for (d, x) in d2.iter_mut().zip(sorted) {
            *d = d.min((x - next).powi(2));
        }
        seeds.push(next);
    }
    seeds.sort_by(f64::total_cmp);
    seeds
}

/// Linear-interpolated quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn two_normals(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Normal::new(40.0, 8.0).unwrap();
        let b = Normal::new(80.0, 10.0).unwrap();
        (0..n)
            .map(|_| if rng.random::<f64>() < 0.4 { a.sample(&mut rng) } else { b.sample(&mut rng) })
            .collect()
    }

    #[test]
    fn single_component_is_closed_form() {
        for family in [VarianceFamily::V, VarianceFamily::E] {
            let f = em_fit(&[10.0, 20.0, 30.0], 1, family, &FitConfig::default()).unwrap();
            assert!((f.means[0] - 20.0).abs() < 1e-12);
            assert!((f.sds[0] - (200.0f64 / 3.0).sqrt()).abs() < 1e-10);
            assert_eq!(f.raw_weights, vec![1.0]);
        }
    }

    #[test]
    fn recovers_two_components() {
        let x = two_normals(3, 2000);
        let f = em_fit(&x, 2, VarianceFamily::V, &FitConfig::default()).unwrap();
        assert!(f.converged);
        assert!((f.means[0] - 40.0).abs() < 1.5 && (f.means[1] - 80.0).abs() < 1.5, "{:?}", f.means);
        assert!((f.raw_weights[0] - 0.4).abs() < 0.05, "{:?}", f.raw_weights);
    }

    #[test]
    fn two_point_data_reaches_floor() {
        let x: Vec<f64> = std::iter::repeat_n(10.0, 1000).chain(std::iter::repeat_n(50.0, 1000)).collect();
        let cfg = FitConfig::default();
        let f = em_fit(&x, 2, VarianceFamily::V, &cfg).unwrap();
        assert!((f.means[0] - 10.0).abs() < 1e-9 && (f.means[1] - 50.0).abs() < 1e-9);
        assert!((f.raw_weights[0] - 0.5).abs() < 1e-12);
        for s in &f.sds {
            assert!((s * s - cfg.var_floor).abs() < 1e-15);
        }
        assert!(f.degenerate);
    }

    #[test]
    fn equal_family_shares_variance() {
        let x = two_normals(5, 600);
        let f = em_fit(&x, 3, VarianceFamily::E, &FitConfig::default()).unwrap();
        assert!(f.sds.windows(2).all(|w| w[0] == w[1]));
        assert!(f.means.windows(2).all(|w| w[0] < w[1]));
        assert!((f.raw_weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let x = two_normals(9, 500);
        let cfg = FitConfig { seed: 42, ..FitConfig::default() };
        let a = em_fit(&x, 3, VarianceFamily::V, &cfg).unwrap();
        let b = em_fit(&x, 3, VarianceFamily::V, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_points() {
        let err = em_fit(&[1.0, 2.0, 3.0], 2, VarianceFamily::V, &FitConfig::default()).unwrap_err();
        assert_eq!(err, FitError::TooFewValues { needed: 4, got: 3 });
        assert_eq!(em_fit(&[1.0, 2.0], 0, VarianceFamily::V, &FitConfig::default()), Err(FitError::NoComponents));
    }

    #[test]
    fn loglik_is_monotone_per_start() {
        let x = two_normals(21, 800);
        for family in [VarianceFamily::V, VarianceFamily::E] {
            let (_, trace) = em_fit_traced(&x, 4, family, &FitConfig::default()).unwrap();
            for lls in &trace.starts {
                for w in lls.windows(2) {
                    assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
                }
            }
        }
    }

    #[test]
    fn candidates_cover_both_families() {
        let x = two_normals(1, 300);
        let c = fit_candidates(&x, &FitConfig { n_starts: 2, ..FitConfig::default() }).unwrap();
        assert_eq!(c.len(), 8);
        assert_eq!(c[0].family, VarianceFamily::V);
        assert_eq!(c[4].family, VarianceFamily::E);
        assert_eq!(c[0].bic, c[4].bic);
    }
}
