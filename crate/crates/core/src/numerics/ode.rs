//! Dormand-Prince 5(4) integrator for scalar ODEs with adaptive step control.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            rel: 1e-10,
            abs: 1e-12,
        }
    }
}

/// One accepted node of a solution: position, value and slope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub t: f64,
    pub y: f64,
    pub dy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// Accepted nodes, first and last included, monotone in `t`.
    pub nodes: Vec<Node>,
    pub rejected: usize,
    pub evaluations: usize,
}

impl Solution {
    pub fn end(&self) -> Node {
        *self.nodes.last().expect("a solution always holds its start node")
    }

    /// Cubic Hermite dense output between accepted nodes.
    pub fn eval(&self, t: f64) -> Option<f64> {
        let first = self.nodes.first()?;
        let last = self.nodes.last()?;
        let (lo, hi) = if first.t <= last.t {
            (first.t, last.t)
        } else {
            (last.t, first.t)
        };
        if t < lo || t > hi {
            return None;
        }
        let forward = last.t >= first.t;
        let idx = self
            .nodes
            .partition_point(|n| if forward { n.t < t } else { n.t > t })
            .clamp(1, self.nodes.len().max(2) - 1);
        if self.nodes.len() == 1 {
            return Some(first.y);
        }
        let (p, q) = (self.nodes[idx - 1], self.nodes[idx]);
        let h = q.t - p.t;
        if h == 0.0 {
            return Some(q.y);
        }
        let s = (t - p.t) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        Some(h00 * p.y + h10 * h * p.dy + h01 * q.y + h11 * h * q.dy)
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// Fifth-order weights are the last row of A; these are fifth minus fourth order.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const MAX_STEPS: usize = 200_000;

/// Integrates `y' = f(t, y)` from `(t0, y0)` to `t1` (either direction).
///
/// `scale(y)` returns the admissible local error for a step ending at `y`;
/// callers that integrate a log-transformed variable use it to express a
/// relative tolerance on the original quantity.
pub fn integrate<F, S>(mut f: F, t0: f64, y0: f64, t1: f64, scale: S) -> Result<Solution>
where
    F: FnMut(f64, f64) -> Result<f64>,
    S: Fn(f64) -> f64,
{
    let mut evaluations = 1;
    let mut dy = f(t0, y0)?;
    let mut nodes = vec![Node { t: t0, y: y0, dy }];
    if t0 == t1 {
        return Ok(Solution {
            nodes,
            rejected: 0,
            evaluations,
        });
    }
    let span = t1 - t0;
    let dir = span.signum();
    let mut h = {
        let sc = scale(y0);
        let guess = if dy == 0.0 {
            span.abs()
        } else {
            0.01 * (sc / dy.abs()).powf(0.2).max(1e-6 * span.abs())
        };
        dir * guess.min(span.abs()).max(span.abs() * 1e-9)
    };
    let (mut t, mut y) = (t0, y0);
    let mut rejected = 0;
    let mut k = [0.0; 7];
    for _ in 0..MAX_STEPS {
        if (t1 - t) * dir <= 0.0 {
            break;
        }
        if (t + h - t1) * dir > 0.0 {
            h = t1 - t;
        }
        k[0] = dy;
        for s in 1..7 {
            let mut acc = 0.0;
            for (j, kj) in k.iter().take(s).enumerate() {
                acc += A[s][j] * kj;
            }
            k[s] = f(t + C[s] * h, y + h * acc)?;
            evaluations += 1;
        }
        let mut y_new = y;
        for j in 0..6 {
            y_new += h * A[6][j] * k[j];
        }
        let err_est: f64 = h * E.iter().zip(&k).map(|(e, kk)| e * kk).sum::<f64>();
        let sc = scale(y_new).max(f64::MIN_POSITIVE);
        let ratio = err_est.abs() / sc;
        if !ratio.is_finite() {
            return Err(Error::numerical(format!(
                "ODE step produced a non-finite error estimate at t = {t}"
            )));
        }
        if ratio <= 1.0 {
            let t_new = if (t + h - t1) * dir >= 0.0 { t1 } else { t + h };
            t = t_new;
            y = y_new;
            dy = k[6];
            nodes.push(Node { t, y, dy });
        } else {
            rejected += 1;
        }
        let factor = if ratio == 0.0 {
            5.0
        } else {
            (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
        if h.abs() < 1e-14 * t.abs().max(1.0) {
            return Err(Error::numerical(format!("ODE step size underflow at t = {t}")));
        }
    }
    if (t1 - t) * dir > 0.0 {
        return Err(Error::numerical(format!(
            "ODE integration exceeded {MAX_STEPS} steps before reaching t = {t1}"
        )));
    }
    Ok(Solution {
        nodes,
        rejected,
        evaluations,
    })
}
