//! Reference computations for the acceptance checks, written without the
//! library's special functions, recursions or samplers.

/// ln Γ(x) for x > 0: upward recurrence to x ≥ 20, then Stirling's series.
pub fn ln_gamma(mut x: f64) -> f64 {
    assert!(x > 0.0);
    let mut shift = 0.0;
    while x < 20.0 {
        shift -= x.ln();
        x += 1.0;
    }
    let z = 1.0 / (x * x);
    let series = (1.0 / 12.0
        + z * (-1.0 / 360.0 + z * (1.0 / 1260.0 + z * (-1.0 / 1680.0 + z * (1.0 / 1188.0 + z * (-691.0 / 360360.0))))))
        / x;
    shift + (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + series
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

pub fn ln_factorial(n: u64) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// ln Γ(x+n)/Γ(x) as a product.
pub fn ln_rising(x: f64, n: u64) -> f64 {
    (0..n).map(|i| (x + i as f64).ln()).sum()
}

/// Gauss-Legendre rule on [-1, 1], nodes by Newton iteration on P_n.
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for i in 1..=n {
            let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let step = p1 / dp;
                x -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            nodes.push(x);
            weights.push(2.0 / ((1.0 - x * x) * dp * dp));
        }
        Self { nodes, weights }
    }

    fn apply(&self, f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        h * self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(c + h * x)).sum::<f64>()
    }

    /// Bisects until each panel agrees with its two halves within `tol`.
    pub fn integrate(&self, f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        self.recurse(f, a, b, self.apply(f, a, b), tol, 0)
    }

    fn recurse(&self, f: &impl Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (l, r) = (self.apply(f, a, m), self.apply(f, m, b));
        if (l + r - whole).abs() <= tol || depth > 40 {
            l + r
        } else {
            self.recurse(f, a, m, l, 0.5 * tol, depth + 1) + self.recurse(f, m, b, r, 0.5 * tol, depth + 1)
        }
    }
}

/// ln ∫ exp(g(x)) dx for a concave `g` on the real line.
pub fn ln_integral(g: impl Fn(f64) -> f64, rule: &GaussLegendre) -> f64 {
    // Golden-section search for the mode.
    let (mut lo, mut hi) = (-60.0_f64, 60.0_f64);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    while hi - lo > 1e-9 {
        let a = hi - r * (hi - lo);
        let b = lo + r * (hi - lo);
        if g(a) < g(b) {
            lo = a;
        } else {
            hi = b;
        }
    }
    let mode = 0.5 * (lo + hi);
    let peak = g(mode);
    let mut left = mode - 1.0;
    while g(left) - peak > -60.0 {
        left -= 1.0;
    }
    let mut right = mode + 1.0;
    while g(right) - peak > -60.0 {
        right += 1.0;
    }
    let f = |x: f64| (g(x) - peak).exp();
    peak + rule.integrate(&f, left, right, 1e-13).ln()
}

/// `ln ∫ Π Poisson(n_t; λ_t θ) Gamma(θ; κ, κ) dθ`, integrated over ln θ.
pub fn mvnb_mixture_loglik(counts: &[u64], lambdas: &[f64], kappa: f64, rule: &GaussLegendre) -> f64 {
    let g = |x: f64| {
        let theta = x.exp();
        let mut s = kappa * kappa.ln() - ln_gamma(kappa) + kappa * x - kappa * theta;
        for (&n, &l) in counts.iter().zip(lambdas) {
            s += n as f64 * (l.ln() + x) - l * theta - ln_factorial(n);
        }
        s
    };
    ln_integral(g, rule)
}

/// `ln ∫ Π NB(n_t; λ_t, p) Beta(p; a, b) dp`, integrated over logit p, with
/// `NB(n; λ, p) = Γ(λ+n)/(Γ(λ) n!) p^λ (1−p)^n`.
pub fn nbbeta_mixture_loglik(counts: &[u64], lambdas: &[f64], a: f64, b: f64, rule: &GaussLegendre) -> f64 {
    let g = |x: f64| {
        // ln p and ln(1 − p) for p = 1/(1 + e^{−x}).
        let ln_p = -softplus(-x);
        let ln_q = -softplus(x);
        let mut s = a * ln_p + b * ln_q - ln_beta(a, b);
        for (&n, &l) in counts.iter().zip(lambdas) {
            s += ln_rising(l, n) - ln_factorial(n) + l * ln_p + n as f64 * ln_q;
        }
        s
    };
    ln_integral(g, rule)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Scale recursion: one level down after a claim-free year, `ψ` up per claim.
pub fn step(level: u32, n: u64, psi: u32, s: u32) -> u32 {
    if n == 0 {
        level.saturating_sub(1).max(1)
    } else {
        (level as u64 + psi as u64 * n).min(s as u64) as u32
    }
}

pub fn relativity(level: u32, delta: f64) -> f64 {
    1.0 + delta * (level as f64 - 1.0)
}

/// NB1 pmf by the ratio recursion `p_{n+1} = p_n (r+n)/(n+1) · τ/(1+τ)`,
/// `r = μ/τ`, `p_0 = (1+τ)^{−r}`; `τ = 0` means Poisson.
pub fn count_pmf(mean: f64, tau: f64, n_max: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(n_max + 1);
    if tau == 0.0 {
        p.push((-mean).exp());
        for n in 0..n_max {
            p.push(p[n] * mean / (n + 1) as f64);
        }
    } else {
        let r = mean / tau;
        let q = tau / (1.0 + tau);
        p.push((1.0 + tau).powf(-r));
        for n in 0..n_max {
            p.push(p[n] * (r + n as f64) / (n + 1) as f64 * q);
        }
    }
    p
}

/// NB2 pmf with `Var = μ + τμ²`: size `1/τ`, failure probability `τμ/(1+τμ)`.
pub fn nb2_pmf(mean: f64, tau: f64, n_max: usize) -> Vec<f64> {
    let r = 1.0 / tau;
    let q = tau * mean / (1.0 + tau * mean);
    let mut p = vec![(1.0 - q).powf(r)];
    for n in 0..n_max {
        p.push(p[n] * (r + n as f64) / (n + 1) as f64 * q);
    }
    p
}

/// Inverse-CDF sampler over a finite pmf table; the last cell absorbs the
/// remaining mass.
pub struct Sampler {
    cdf: Vec<f64>,
}

impl Sampler {
    pub fn new(pmf: &[f64]) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = pmf
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        *cdf.last_mut().expect("non-empty") = f64::INFINITY;
        Self { cdf }
    }

    #[inline]
    pub fn draw(&self, u: f64) -> u64 {
        self.cdf.iter().position(|&c| u < c).expect("last cell is infinite") as u64
    }
}

/// Every level path of `years` steps from `start`, enumerated explicitly.
pub struct PathSummary {
    /// Probability of each terminal level (index 0 unused).
    pub terminal: Vec<f64>,
    /// The most probable single path: its probability and final level.
    pub best: (f64, u32),
    /// Probability of the second most probable path.
    pub runner_up: f64,
}

/// `pmf_at(level)` is the claim-count pmf of a year spent at `level`, long
/// enough to reach the top of the scale.
pub fn enumerate_paths(start: u32, years: u32, psi: u32, s: u32, pmf_at: &impl Fn(u32) -> Vec<f64>) -> PathSummary {
    let tables: Vec<Vec<f64>> = (0..=s).map(|l| if l == 0 { Vec::new() } else { pmf_at(l) }).collect();
    let mut out = PathSummary { terminal: vec![0.0; s as usize + 1], best: (0.0, 0), runner_up: 0.0 };
    walk(start, years, 1.0, psi, s, &tables, &mut out);
    out
}

fn walk(level: u32, left: u32, prob: f64, psi: u32, s: u32, tables: &[Vec<f64>], out: &mut PathSummary) {
    if left == 0 {
        out.terminal[level as usize] += prob;
        if prob > out.best.0 {
            out.runner_up = out.best.0;
            out.best = (prob, level);
        } else if prob > out.runner_up {
            out.runner_up = prob;
        }
        return;
    }
    let pmf = &tables[level as usize];
    let mut below_top = 0.0;
    let mut n = 0u64;
    loop {
        let next = step(level, n, psi, s);
        if next == s {
            break;
        }
        walk(next, left - 1, prob * pmf[n as usize], psi, s, tables, out);
        below_top += pmf[n as usize];
        n += 1;
    }
    // Every count that lands on the top level, as one transition.
    walk(s, left - 1, prob * (1.0 - below_top), psi, s, tables, out);
}
