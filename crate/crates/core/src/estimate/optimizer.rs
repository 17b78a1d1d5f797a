//! Quasi-Newton minimisation (BFGS with a strong-Wolfe line search).

/// Smooth objective to minimise.
pub trait Objective {
    fn dim(&self) -> usize;

    /// Value and gradient at `x`. Non-finite values mark infeasible points.
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    /// Stop when `‖∇f‖∞ < gtol`.
    pub gtol: f64,
    /// Stop when the relative decrease of `f` stays below `ftol` for three
    /// consecutive iterations.
    pub ftol: f64,
    pub max_iter: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { gtol: 1e-6, ftol: 1e-10, max_iter: 500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    Function,
    MaxIter,
    LineSearch,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

impl Minimum {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Gradient
    }

    pub fn grad_norm(&self) -> f64 {
        inf_norm(&self.grad)
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimises `f` starting at `x0`.
pub fn bfgs<F: Objective>(f: &F, x0: &[f64], opts: BfgsOptions) -> Minimum {
    let n = f.dim();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f.value_grad(&x, &mut g);
    // Inverse-Hessian approximation, row-major.
    let mut h = identity(n);
    let mut first = true;
    let mut iterations = 0;
    let mut stalls = 0;
    let termination = loop {
        if !fx.is_finite() {
            break Termination::LineSearch;
        }
        if inf_norm(&g) < opts.gtol {
            break Termination::Gradient;
        }
        if iterations >= opts.max_iter {
            break Termination::MaxIter;
        }
        let mut d: Vec<f64> = (0..n).map(|i| -dot(&h[i * n..(i + 1) * n], &g)).collect();
        if dot(&d, &g) >= 0.0 {
            h = identity(n);
            d = g.iter().map(|v| -v).collect();
        }
        let step0 = if first { (1.0 / inf_norm(&g)).min(1.0) } else { 1.0 };
        let Some((alpha, f_new, g_new)) = line_search(f, &x, fx, &g, &d, step0) else {
            if first {
                break Termination::LineSearch;
            }
            // Retry once along steepest descent from a reset metric.
            h = identity(n);
            first = true;
            continue;
        };
        iterations += 1;
        let s: Vec<f64> = d.iter().map(|v| alpha * v).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let x_new: Vec<f64> = x.iter().zip(&s).map(|(a, b)| a + b).collect();
        let decrease = fx - f_new;
        x = x_new;
        g = g_new;
        let f_old = fx;
        fx = f_new;
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if first {
                let scale = sy / dot(&y, &y);
                h.iter_mut().for_each(|v| *v *= scale);
            }
            bfgs_update(&mut h, &s, &y, sy);
        }
        first = false;
        if decrease.abs() <= opts.ftol * f_old.abs().max(fx.abs()).max(1e-300) {
            stalls += 1;
            if stalls >= 3 {
                if inf_norm(&g) < opts.gtol {
                    break Termination::Gradient;
                }
                break Termination::Function;
            }
        } else {
            stalls = 0;
        }
    };
    Minimum { x, value: fx, grad: g, iterations, termination }
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    (0..n).for_each(|i| h[i * n + i] = 1.0);
    h
}

fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], y)).collect();
    let yhy = dot(y, &hy);
    let c = (1.0 + rho * yhy) * rho;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += c * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

/// Strong-Wolfe line search (bracketing plus zoom by cubic/bisection).
fn line_search<F: Objective>(
    f: &F,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    d: &[f64],
    step0: f64,
) -> Option<(f64, f64, Vec<f64>)> {
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let dg0 = dot(g0, d);
    let mut eval = |a: f64| -> (f64, f64, Vec<f64>) {
        let xa: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + a * di).collect();
        let mut g = vec![0.0; x.len()];
        let v = f.value_grad(&xa, &mut g);
        let dg = dot(&g, d);
        (v, dg, g)
    };
    let mut a_prev = 0.0;
    let mut f_prev = f0;
    let mut dg_prev = dg0;
    let mut a = step0;
    for i in 0..30 {
        let (fa, dga, g) = eval(a);
        if !fa.is_finite() {
            // Infeasible: shrink towards the last good point.
            a = a_prev + 0.25 * (a - a_prev);
            continue;
        }
        if fa > f0 + C1 * a * dg0 || (i > 0 && fa >= f_prev) {
            return zoom(&mut eval, f0, dg0, (a_prev, f_prev, dg_prev), (a, fa, dga));
        }
        if dga.abs() <= -C2 * dg0 {
            return Some((a, fa, g));
        }
        if dga >= 0.0 {
            return zoom(&mut eval, f0, dg0, (a, fa, dga), (a_prev, f_prev, dg_prev));
        }
        a_prev = a;
        f_prev = fa;
        dg_prev = dga;
        a *= 2.0;
    }
    None
}

type Point = (f64, f64, f64);

fn zoom(
    eval: &mut impl FnMut(f64) -> (f64, f64, Vec<f64>),
    f0: f64,
    dg0: f64,
    mut lo: Point,
    mut hi: Point,
) -> Option<(f64, f64, Vec<f64>)> {
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    for _ in 0..40 {
        let a = cubic_min(lo, hi).unwrap_or(0.5 * (lo.0 + hi.0));
        let (fa, dga, gv) = eval(a);
        if fa.is_finite() && fa < f0 && best.as_ref().is_none_or(|b| fa < b.1) {
            best = Some((a, fa, gv.clone()));
        }
        if !fa.is_finite() || fa > f0 + C1 * a * dg0 || fa >= lo.1 {
            hi = (a, fa, dga);
        } else {
            if dga.abs() <= -C2 * dg0 {
                return Some((a, fa, gv));
            }
            if dga * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (a, fa, dga);
        }
        if (hi.0 - lo.0).abs() < 1e-14 * lo.0.abs().max(1e-10) {
            break;
        }
    }
    // Accept any sufficient decrease found even if curvature was not met.
    best.filter(|b| b.1 <= f0 + C1 * b.0 * dg0)
}

/// Minimiser of the cubic through two points with slopes, if it lies safely
/// inside the interval.
fn cubic_min(p: Point, q: Point) -> Option<f64> {
    let (a, fa, da) = p;
    let (b, fb, db) = q;
    if !fb.is_finite() {
        return None;
    }
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return None;
    }
    let d2 = disc.sqrt().copysign(b - a);
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (hi - lo);
    (t.is_finite() && t > lo + margin && t < hi - margin).then_some(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;

    impl Objective for Rosenbrock {
        fn dim(&self) -> usize {
            2
        }

        fn value_grad(&self, x: &[f64], g: &mut [f64]) -> f64 {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        }
    }

    struct Quadratic(Vec<f64>);

    impl Objective for Quadratic {
        fn dim(&self) -> usize {
            self.0.len()
        }

        fn value_grad(&self, x: &[f64], g: &mut [f64]) -> f64 {
            let mut v = 0.0;
            for (i, (&xi, &w)) in x.iter().zip(&self.0).enumerate() {
                g[i] = w * (xi - i as f64);
                v += 0.5 * w * (xi - i as f64).powi(2);
            }
            v
        }
    }

    #[test]
    fn rosenbrock() {
        let m = bfgs(&Rosenbrock, &[-1.2, 1.0], BfgsOptions { ftol: 0.0, ..Default::default() });
        assert_eq!(m.termination, Termination::Gradient);
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{:?}", m.x);
    }

    #[test]
    fn ill_conditioned_quadratic() {
        let q = Quadratic(vec![1.0, 10.0, 100.0, 1000.0, 1e4]);
        let m = bfgs(&q, &[5.0; 5], BfgsOptions { ftol: 0.0, ..Default::default() });
        assert!(m.converged());
        for (i, xi) in m.x.iter().enumerate() {
            assert!((xi - i as f64).abs() < 1e-6);
        }
    }

    struct Barrier;

    impl Objective for Barrier {
        fn dim(&self) -> usize {
            1
        }

        fn value_grad(&self, x: &[f64], g: &mut [f64]) -> f64 {
            if x[0] <= 0.0 {
                g[0] = 0.0;
                return f64::INFINITY;
            }
            g[0] = 1.0 - 1.0 / x[0];
            x[0] - x[0].ln()
        }
    }

    #[test]
    fn recovers_from_infeasible_trial_steps() {
        let m = bfgs(&Barrier, &[0.01], BfgsOptions::default());
        assert!(m.converged());
        assert!((m.x[0] - 1.0).abs() < 1e-5);
    }
}
