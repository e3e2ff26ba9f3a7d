//! BFGS with a Moré–Thuente line search, following the MINPACK-2 `dcsrch`
//! routine and the inverse-Hessian update used by common scientific stacks.

use crate::error::Error;

/// Why an objective evaluation produced no value.
#[derive(Debug)]
pub(crate) enum EvalError {
    /// The point lies outside the region where the objective is defined.
    Infeasible,
    Fatal(Error),
}

pub(crate) type Eval = std::result::Result<(f64, Vec<f64>), EvalError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum EventKind {
    Accepted,
    Trial,
    Infeasible,
}

/// One objective evaluation, or an accepted iterate.
#[derive(Clone, Debug)]
pub(crate) struct Event {
    pub iteration: usize,
    pub kind: EventKind,
    pub x: Vec<f64>,
    pub f: Option<f64>,
    pub gnorm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Termination {
    Converged,
    MaxIterations,
    Infeasible(Vec<f64>),
    /// The line search could not find an acceptable step.
    Stalled,
}

#[derive(Clone, Debug)]
pub(crate) struct Options {
    pub gtol: f64,
    pub max_iter: usize,
    /// Fail on the first infeasible trial instead of shrinking the step.
    pub strict_infeasible: bool,
    pub max_halvings: usize,
}

#[derive(Debug)]
pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub g: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    pub events: Vec<Event>,
}

fn inf_norm(g: &[f64]) -> f64 {
    g.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Driver<'a, F> {
    f: &'a mut F,
    events: Vec<Event>,
    iteration: usize,
}

impl<F: FnMut(&[f64]) -> Eval> Driver<'_, F> {
    fn eval(&mut self, x: &[f64], kind: EventKind) -> Eval {
        let r = (self.f)(x);
        let (f, gnorm, kind) = match &r {
            Ok((f, g)) => (Some(*f), Some(inf_norm(g)), kind),
            Err(_) => (None, None, EventKind::Infeasible),
        };
        self.events.push(Event {
            iteration: self.iteration,
            kind,
            x: x.to_vec(),
            f,
            gnorm,
        });
        r
    }
}

enum Search {
    Found { stp: f64, f: f64, g: Vec<f64> },
    Failed,
    Infeasible(Vec<f64>),
}

/// Minimizes `f` from `x0`. `f` returns the value and gradient.
pub(crate) fn minimize<F: FnMut(&[f64]) -> Eval>(mut f: F, x0: &[f64], opts: &Options) -> Result<Outcome, Error> {
    let n = x0.len();
    let mut d = Driver {
        f: &mut f,
        events: Vec::new(),
        iteration: 0,
    };
    let (mut fk, mut gk) = match d.eval(x0, EventKind::Accepted) {
        Ok(v) => v,
        Err(EvalError::Infeasible) => {
            return Ok(Outcome {
                x: x0.to_vec(),
                f: f64::NAN,
                g: vec![f64::NAN; n],
                iterations: 0,
                termination: Termination::Infeasible(x0.to_vec()),
                events: d.events,
            })
        }
        Err(EvalError::Fatal(e)) => return Err(e),
    };
    let mut xk = x0.to_vec();
    let mut h = identity(n);
    let mut old_old_f = fk + dot(&gk, &gk).sqrt() / 2.0;
    let mut k = 0;
    let mut termination = Termination::MaxIterations;
    let mut gnorm = inf_norm(&gk);
    if gnorm <= opts.gtol {
        termination = Termination::Converged;
    }
    while gnorm > opts.gtol && k < opts.max_iter {
        d.iteration = k + 1;
        let pk: Vec<f64> = (0..n).map(|i| -dot(&h[i], &gk)).collect();
        let search = line_search(&mut d, &xk, &pk, fk, &gk, old_old_f, opts)?;
        let (stp, f1, g1) = match search {
            Search::Found { stp, f, g } => (stp, f, g),
            Search::Failed => {
                termination = Termination::Stalled;
                break;
            }
            Search::Infeasible(x) => {
                termination = Termination::Infeasible(x);
                break;
            }
        };
        let sk: Vec<f64> = pk.iter().map(|p| stp * p).collect();
        xk.iter_mut().zip(&sk).for_each(|(x, s)| *x += s);
        let yk: Vec<f64> = g1.iter().zip(&gk).map(|(a, b)| a - b).collect();
        old_old_f = fk;
        fk = f1;
        gk = g1;
        k += 1;
        gnorm = inf_norm(&gk);
        d.events.push(Event {
            iteration: k,
            kind: EventKind::Accepted,
            x: xk.clone(),
            f: Some(fk),
            gnorm: Some(gnorm),
        });
        if gnorm <= opts.gtol {
            termination = Termination::Converged;
            break;
        }
        if !fk.is_finite() {
            termination = Termination::Stalled;
            break;
        }
        update_inverse_hessian(&mut h, &sk, &yk);
    }
    Ok(Outcome {
        x: xk,
        f: fk,
        g: gk,
        iterations: k,
        termination,
        events: d.events,
    })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect()
}

/// `H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ`.
fn update_inverse_hessian(h: &mut [Vec<f64>], s: &[f64], y: &[f64]) {
    let n = s.len();
    let sy = dot(s, y);
    let rho = if sy == 0.0 { 1000.0 } else { 1.0 / sy };
    let a1: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| f64::from(u8::from(i == j)) - rho * s[i] * y[j]).collect())
        .collect();
    let a2: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| f64::from(u8::from(i == j)) - rho * y[i] * s[j]).collect())
        .collect();
    let ha2: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|l| h[i][l] * a2[l][j]).sum()).collect())
        .collect();
    for i in 0..n {
        for j in 0..n {
            h[i][j] = (0..n).map(|l| a1[i][l] * ha2[l][j]).sum::<f64>() + rho * s[i] * s[j];
        }
    }
}

fn line_search<F: FnMut(&[f64]) -> Eval>(
    d: &mut Driver<'_, F>,
    xk: &[f64],
    pk: &[f64],
    f0: f64,
    g0: &[f64],
    old_f0: f64,
    opts: &Options,
) -> Result<Search, Error> {
    let dphi0 = dot(g0, pk);
    let mut alpha1 = if dphi0 != 0.0 {
        let a = (1.01 * 2.0 * (f0 - old_f0) / dphi0).min(1.0);
        if a < 0.0 {
            1.0
        } else {
            a
        }
    } else {
        1.0
    };
    let mut stpmax = 1e100;
    let mut halvings = 0;
    loop {
        let mut search = Dcsrch::new(1e-4, 0.9, 1e-14, 1e-100, stpmax);
        match search.run(d, xk, pk, alpha1, f0, dphi0)? {
            Step::Done(stp, f, g) => return Ok(Search::Found { stp, f, g }),
            Step::Failed => return backtrack(d, xk, pk, f0, dphi0, alpha1),
            Step::Infeasible(stp, x) => {
                if opts.strict_infeasible || halvings >= opts.max_halvings {
                    return Ok(Search::Infeasible(x));
                }
                halvings += 1;
                stpmax = stp;
                alpha1 = stp / 2.0;
            }
        }
    }
}

/// Armijo backtracking used when the Wolfe search gives up.
fn backtrack<F: FnMut(&[f64]) -> Eval>(
    d: &mut Driver<'_, F>,
    xk: &[f64],
    pk: &[f64],
    f0: f64,
    dphi0: f64,
    start: f64,
) -> Result<Search, Error> {
    if dphi0 >= 0.0 {
        return Ok(Search::Failed);
    }
    let mut stp = start;
    for _ in 0..60 {
        let x: Vec<f64> = xk.iter().zip(pk).map(|(x, p)| x + stp * p).collect();
        match d.eval(&x, EventKind::Trial) {
            Ok((f, g)) if f <= f0 + 1e-4 * stp * dphi0 => return Ok(Search::Found { stp, f, g }),
            Ok(_) | Err(EvalError::Infeasible) => stp /= 2.0,
            Err(EvalError::Fatal(e)) => return Err(e),
        }
    }
    Ok(Search::Failed)
}

enum Step {
    Done(f64, f64, Vec<f64>),
    Failed,
    Infeasible(f64, Vec<f64>),
}

enum Task {
    Fg,
    Converged,
    Warning,
    Error,
}

struct Dcsrch {
    ftol: f64,
    gtol: f64,
    xtol: f64,
    stpmin: f64,
    stpmax: f64,
    brackt: bool,
    stage: u8,
    finit: f64,
    ginit: f64,
    gtest: f64,
    width: f64,
    width1: f64,
    stx: f64,
    fx: f64,
    gx: f64,
    sty: f64,
    fy: f64,
    gy: f64,
    stmin: f64,
    stmax: f64,
}

impl Dcsrch {
    fn new(ftol: f64, gtol: f64, xtol: f64, stpmin: f64, stpmax: f64) -> Self {
        Self {
            ftol,
            gtol,
            xtol,
            stpmin,
            stpmax,
            brackt: false,
            stage: 1,
            finit: 0.0,
            ginit: 0.0,
            gtest: 0.0,
            width: 0.0,
            width1: 0.0,
            stx: 0.0,
            fx: 0.0,
            gx: 0.0,
            sty: 0.0,
            fy: 0.0,
            gy: 0.0,
            stmin: 0.0,
            stmax: 0.0,
        }
    }

    fn run<F: FnMut(&[f64]) -> Eval>(
        &mut self,
        d: &mut Driver<'_, F>,
        xk: &[f64],
        pk: &[f64],
        alpha1: f64,
        phi0: f64,
        dphi0: f64,
    ) -> Result<Step, Error> {
        let (mut stp, task) = self.start(alpha1, phi0, dphi0);
        if !matches!(task, Task::Fg) {
            return Ok(Step::Failed);
        }
        for _ in 0..100 {
            let x: Vec<f64> = xk.iter().zip(pk).map(|(x, p)| x + stp * p).collect();
            let (f, g) = match d.eval(&x, EventKind::Trial) {
                Ok(v) => v,
                Err(EvalError::Infeasible) => return Ok(Step::Infeasible(stp, x)),
                Err(EvalError::Fatal(e)) => return Err(e),
            };
            let dg = dot(&g, pk);
            let (next, task) = self.iterate(stp, f, dg);
            match task {
                Task::Converged => return Ok(Step::Done(stp, f, g)),
                Task::Warning | Task::Error => return Ok(Step::Failed),
                Task::Fg => {
                    if !next.is_finite() {
                        return Ok(Step::Failed);
                    }
                    stp = next;
                }
            }
        }
        Ok(Step::Failed)
    }

    fn start(&mut self, stp: f64, f: f64, g: f64) -> (f64, Task) {
        if stp < self.stpmin || stp > self.stpmax || g >= 0.0 {
            return (stp, Task::Error);
        }
        self.brackt = false;
        self.stage = 1;
        self.finit = f;
        self.ginit = g;
        self.gtest = self.ftol * self.ginit;
        self.width = self.stpmax - self.stpmin;
        self.width1 = self.width / 0.5;
        self.stx = 0.0;
        self.fx = self.finit;
        self.gx = self.ginit;
        self.sty = 0.0;
        self.fy = self.finit;
        self.gy = self.ginit;
        self.stmin = 0.0;
        self.stmax = stp + 4.0 * stp;
        (stp, Task::Fg)
    }

    fn iterate(&mut self, mut stp: f64, f: f64, g: f64) -> (f64, Task) {
        const P5: f64 = 0.5;
        const P66: f64 = 0.66;
        const XTRAPL: f64 = 1.1;
        const XTRAPU: f64 = 4.0;

        let ftest = self.finit + stp * self.gtest;
        if self.stage == 1 && f <= ftest && g >= 0.0 {
            self.stage = 2;
        }
        let mut task = Task::Fg;
        if self.brackt && (stp <= self.stmin || stp >= self.stmax) {
            task = Task::Warning;
        }
        if self.brackt && self.stmax - self.stmin <= self.xtol * self.stmax {
            task = Task::Warning;
        }
        if stp == self.stpmax && f <= ftest && g <= self.gtest {
            task = Task::Warning;
        }
        if stp == self.stpmin && (f > ftest || g >= self.gtest) {
            task = Task::Warning;
        }
        if f <= ftest && g.abs() <= self.gtol * -self.ginit {
            task = Task::Converged;
        }
        if !matches!(task, Task::Fg) {
            return (stp, task);
        }

        if self.stage == 1 && f <= self.fx && f > ftest {
            // modified function values keep the first stage inside the sufficient decrease region
            let fm = f - stp * self.gtest;
            let mut fxm = self.fx - self.stx * self.gtest;
            let mut fym = self.fy - self.sty * self.gtest;
            let gm = g - self.gtest;
            let mut gxm = self.gx - self.gtest;
            let mut gym = self.gy - self.gtest;
            let mut s = StepState {
                stx: self.stx,
                fx: fxm,
                dx: gxm,
                sty: self.sty,
                fy: fym,
                dy: gym,
                brackt: self.brackt,
            };
            stp = dcstep(&mut s, stp, fm, gm, self.stmin, self.stmax);
            self.stx = s.stx;
            fxm = s.fx;
            gxm = s.dx;
            self.sty = s.sty;
            fym = s.fy;
            gym = s.dy;
            self.brackt = s.brackt;
            self.fx = fxm + self.stx * self.gtest;
            self.fy = fym + self.sty * self.gtest;
            self.gx = gxm + self.gtest;
            self.gy = gym + self.gtest;
        } else {
            let mut s = StepState {
                stx: self.stx,
                fx: self.fx,
                dx: self.gx,
                sty: self.sty,
                fy: self.fy,
                dy: self.gy,
                brackt: self.brackt,
            };
            stp = dcstep(&mut s, stp, f, g, self.stmin, self.stmax);
            self.stx = s.stx;
            self.fx = s.fx;
            self.gx = s.dx;
            self.sty = s.sty;
            self.fy = s.fy;
            self.gy = s.dy;
            self.brackt = s.brackt;
        }

        if self.brackt {
            if (self.sty - self.stx).abs() >= P66 * self.width1 {
                stp = self.stx + P5 * (self.sty - self.stx);
            }
            self.width1 = self.width;
            self.width = (self.sty - self.stx).abs();
            self.stmin = self.stx.min(self.sty);
            self.stmax = self.stx.max(self.sty);
        } else {
            self.stmin = stp + XTRAPL * (stp - self.stx);
            self.stmax = stp + XTRAPU * (stp - self.stx);
        }

        stp = stp.clamp(self.stpmin, self.stpmax);
        if self.brackt && (stp <= self.stmin || stp >= self.stmax)
            || self.brackt && self.stmax - self.stmin <= self.xtol * self.stmax
        {
            stp = self.stx;
        }
        (stp, Task::Fg)
    }
}

struct StepState {
    stx: f64,
    fx: f64,
    dx: f64,
    sty: f64,
    fy: f64,
    dy: f64,
    brackt: bool,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Safeguarded step of the Moré–Thuente search; updates the bracketing interval.
fn dcstep(s: &mut StepState, stp: f64, fp: f64, dp: f64, stpmin: f64, stpmax: f64) -> f64 {
    let (stx, fx, dx, sty, fy, dy) = (s.stx, s.fx, s.dx, s.sty, s.fy, s.dy);
    let sgnd = sign(dp) * sign(dx);
    let stpf;
    if fp > fx {
        let theta = 3.0 * (fx - fp) / (stp - stx) + dx + dp;
        let sc = theta.abs().max(dx.abs()).max(dp.abs());
        let mut gamma = sc * ((theta / sc).powi(2) - (dx / sc) * (dp / sc)).sqrt();
        if stp < stx {
            gamma = -gamma;
        }
        let p = (gamma - dx) + theta;
        let q = ((gamma - dx) + gamma) + dp;
        let r = p / q;
        let stpc = stx + r * (stp - stx);
        let stpq = stx + ((dx / ((fx - fp) / (stp - stx) + dx)) / 2.0) * (stp - stx);
        stpf = if (stpc - stx).abs() <= (stpq - stx).abs() {
            stpc
        } else {
            stpc + (stpq - stpc) / 2.0
        };
        s.brackt = true;
    } else if sgnd < 0.0 {
        let theta = 3.0 * (fx - fp) / (stp - stx) + dx + dp;
        let sc = theta.abs().max(dx.abs()).max(dp.abs());
        let mut gamma = sc * ((theta / sc).powi(2) - (dx / sc) * (dp / sc)).sqrt();
        if stp > stx {
            gamma = -gamma;
        }
        let p = (gamma - dp) + theta;
        let q = ((gamma - dp) + gamma) + dx;
        let r = p / q;
        let stpc = stp + r * (stx - stp);
        let stpq = stp + (dp / (dp - dx)) * (stx - stp);
        stpf = if (stpc - stp).abs() > (stpq - stp).abs() { stpc } else { stpq };
        s.brackt = true;
    } else if dp.abs() < dx.abs() {
        let theta = 3.0 * (fx - fp) / (stp - stx) + dx + dp;
        let sc = theta.abs().max(dx.abs()).max(dp.abs());
        let mut gamma = sc * ((theta / sc).powi(2) - (dx / sc) * (dp / sc)).max(0.0).sqrt();
        if stp > stx {
            gamma = -gamma;
        }
        let p = (gamma - dp) + theta;
        let q = (gamma + (dx - dp)) + gamma;
        let r = p / q;
        let stpc = if r < 0.0 && gamma != 0.0 {
            stp + r * (stx - stp)
        } else if stp > stx {
            stpmax
        } else {
            stpmin
        };
        let stpq = stp + (dp / (dp - dx)) * (stx - stp);
        if s.brackt {
            let f = if (stpc - stp).abs() < (stpq - stp).abs() { stpc } else { stpq };
            stpf = if stp > stx {
                f.min(stp + 0.66 * (sty - stp))
            } else {
                f.max(stp + 0.66 * (sty - stp))
            };
        } else {
            let f = if (stpc - stp).abs() > (stpq - stp).abs() { stpc } else { stpq };
            stpf = f.clamp(stpmin, stpmax);
        }
    } else if s.brackt {
        let theta = 3.0 * (fp - fy) / (sty - stp) + dy + dp;
        let sc = theta.abs().max(dy.abs()).max(dp.abs());
        let mut gamma = sc * ((theta / sc).powi(2) - (dy / sc) * (dp / sc)).sqrt();
        if stp > sty {
            gamma = -gamma;
        }
        let p = (gamma - dp) + theta;
        let q = ((gamma - dp) + gamma) + dy;
        let r = p / q;
        stpf = stp + r * (sty - stp);
    } else if stp > stx {
        stpf = stpmax;
    } else {
        stpf = stpmin;
    }

    if fp > fx {
        s.sty = stp;
        s.fy = fp;
        s.dy = dp;
    } else {
        if sgnd < 0.0 {
            s.sty = stx;
            s.fy = fx;
            s.dy = dx;
        }
        s.stx = stp;
        s.fx = fp;
        s.dx = dp;
    }
    stpf
}
