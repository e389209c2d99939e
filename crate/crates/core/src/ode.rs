//! Adaptive Dormand–Prince 5(4) integrator with an observer hook.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Initial and largest step.
    pub dt: f64,
    /// Steps may shrink to `dt · min_step_ratio` before giving up.
    pub min_step_ratio: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-12,
            atol: 1e-12,
            dt: 0.05,
            min_step_ratio: 1e-6,
            max_steps: 200_000,
        }
    }
}

/// Whether integration should go on after an accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

/// State, derivative and time at an accepted step.
#[derive(Debug, Clone)]
pub struct Node<'a> {
    pub t: f64,
    pub y: &'a [f64],
    pub dy: &'a [f64],
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
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
/// Fifth-order weights minus the embedded fourth-order ones.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates `y' = f(t, y)` from `t0` to `t_end`. `observe` sees the initial
/// node and every accepted step; returning [`Flow::Stop`] ends integration
/// early. Returns the final time and state.
pub fn integrate<F, O>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    opts: &OdeOptions,
    mut observe: O,
) -> Result<(f64, Vec<f64>)>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    O: FnMut(&Node) -> Result<Flow>,
{
    if !(opts.dt > 0.0 && opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(Error::InvalidInput(
            "step and tolerances must be positive".into(),
        ));
    }
    let n = y0.len();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    f(t, &y, &mut k[0])?;
    if observe(&Node {
        t,
        y: &y,
        dy: &k[0],
    })? == Flow::Stop
        || t_end <= t0
    {
        return Ok((t, y));
    }
    let h_min = opts.dt * opts.min_step_ratio;
    let mut h = opts.dt.min(t_end - t0);
    let mut stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    for _ in 0..opts.max_steps {
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }
        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, a) in A[s][..s].iter().enumerate() {
                    acc += a * k[j][i];
                }
                stage[i] = y[i] + h * acc;
            }
            f(t + C[s] * h, &stage, &mut k[s])?;
        }
        // stage 6 evaluated the fifth-order solution itself (FSAL)
        y_new.copy_from_slice(&stage);
        let mut err = 0.0;
        for i in 0..n {
            let e: f64 = h * (0..7).map(|s| E[s] * k[s][i]).sum::<f64>();
            let sc = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            err += (e / sc).powi(2);
        }
        let err = (err / n.max(1) as f64).sqrt();
        if !err.is_finite() {
            h *= 0.2;
        } else if err <= 1.0 {
            t = if last { t_end } else { t + h };
            std::mem::swap(&mut y, &mut y_new);
            k.swap(0, 6);
            if observe(&Node {
                t,
                y: &y,
                dy: &k[0],
            })? == Flow::Stop
                || last
            {
                return Ok((t, y));
            }
            let grow = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h = (h * grow).min(opts.dt);
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
        }
        if h < h_min {
            return Err(Error::StepFailure { t, dt: h });
        }
    }
    Err(Error::StepFailure { t, dt: h })
}

/// Cubic Hermite interpolation between two accepted nodes.
pub fn hermite(a: &Node, b: &Node, t: f64) -> Vec<f64> {
    let h = b.t - a.t;
    let s = (t - a.t) / h;
    let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
    let h10 = s * (1.0 - s) * (1.0 - s);
    let h01 = s * s * (3.0 - 2.0 * s);
    let h11 = s * s * (s - 1.0);
    (0..a.y.len())
        .map(|i| h00 * a.y[i] + h10 * h * a.dy[i] + h01 * b.y[i] + h11 * h * b.dy[i])
        .collect()
}

/// Owned copy of a [`Node`].
#[derive(Debug, Clone, PartialEq)]
pub struct OwnedNode {
    pub t: f64,
    pub y: Vec<f64>,
    pub dy: Vec<f64>,
}

impl OwnedNode {
    pub fn of(n: &Node) -> Self {
        OwnedNode {
            t: n.t,
            y: n.y.to_vec(),
            dy: n.dy.to_vec(),
        }
    }

    pub fn view(&self) -> Node<'_> {
        Node {
            t: self.t,
            y: &self.y,
            dy: &self.dy,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator() {
        let opts = OdeOptions {
            dt: 0.5,
            ..OdeOptions::default()
        };
        let mut steps = 0;
        let (t, y) = integrate(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
                Ok(())
            },
            0.0,
            &[1.0, 0.0],
            10.0,
            &opts,
            |_| {
                steps += 1;
                Ok(Flow::Continue)
            },
        )
        .unwrap();
        assert_eq!(t, 10.0);
        assert!((y[0] - 10f64.cos()).abs() < 1e-10 && (y[1] + 10f64.sin()).abs() < 1e-10);
        assert!(steps > 10);
    }

    #[test]
    fn observer_stops_and_hermite_interpolates() {
        let mut nodes = Vec::new();
        integrate(
            |_, y, dy| {
                dy[0] = y[0];
                Ok(())
            },
            0.0,
            &[1.0],
            5.0,
            &OdeOptions {
                dt: 0.1,
                ..OdeOptions::default()
            },
            |n| {
                nodes.push(OwnedNode::of(n));
                Ok(if n.t > 1.0 {
                    Flow::Stop
                } else {
                    Flow::Continue
                })
            },
        )
        .unwrap();
        let last = nodes.last().unwrap();
        assert!(last.t > 1.0 && last.t < 1.2);
        let (a, b) = (&nodes[nodes.len() - 2], last);
        let mid = 0.5 * (a.t + b.t);
        assert!((hermite(&a.view(), &b.view(), mid)[0] - mid.exp()).abs() < 1e-7);
    }

    #[test]
    fn collapse_is_a_step_failure() {
        let opts = OdeOptions {
            dt: 0.5,
            min_step_ratio: 1e-3,
            ..OdeOptions::default()
        };
        let out = integrate(
            |t, _, dy| {
                dy[0] = 1.0 / (1.0 - t);
                Ok(())
            },
            0.0,
            &[0.0],
            2.0,
            &opts,
            |_| Ok(Flow::Continue),
        );
        assert!(matches!(out, Err(Error::StepFailure { .. })));
    }
}
