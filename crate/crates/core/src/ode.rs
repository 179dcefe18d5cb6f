//! Classical RK4 with step-doubling error control and blow-up detection.

/// Controls for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct Adaptive {
    pub rtol: f64,
    pub atol: f64,
    /// First trial step and upper bound on any step.
    pub h_max: f64,
    /// Any component above this magnitude counts as blow-up.
    pub cap: f64,
    /// Any component at or below this value counts as loss of positivity.
    pub floor: Option<f64>,
}

impl Default for Adaptive {
    fn default() -> Self {
        Adaptive {
            rtol: 1e-11,
            atol: 1e-12,
            h_max: 1e-2,
            cap: 1e12,
            floor: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    /// State at each grid point that was reached.
    pub ys: Vec<Vec<f64>>,
    /// First x at which the state left the admissible region.
    pub blow_up: Option<f64>,
    pub steps: usize,
}

impl Solution {
    pub fn completed(&self) -> bool {
        self.blow_up.is_none()
    }
}

/// One classical fourth-order Runge–Kutta step.
pub fn rk4_step<F>(rhs: &mut F, x: f64, y: &[f64], h: f64, out: &mut [f64])
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    Scratch::new(y.len()).step(rhs, x, y, h, out);
}

struct Scratch {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
        }
    }

    fn step<F>(&mut self, rhs: &mut F, x: f64, y: &[f64], h: f64, out: &mut [f64])
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = y.len();
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        rhs(x, y, k1);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        rhs(x + 0.5 * h, tmp, k2);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        rhs(x + 0.5 * h, tmp, k3);
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        rhs(x + h, tmp, k4);
        for i in 0..n {
            out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

fn admissible(y: &[f64], opts: &Adaptive) -> bool {
    y.iter().all(|&v| {
        v.is_finite() && v.abs() <= opts.cap && opts.floor.is_none_or(|fl| v > fl)
    })
}

/// Integrates `y' = rhs(x, y)` from `grid[0]` through the increasing `grid`,
/// landing exactly on each grid point.
///
/// Each step is compared against two half steps; the local error estimate is
/// `|y_half − y_full| / 15` and accepted steps keep the extrapolated value.
/// Stops at the first point where the state is non-finite, exceeds `cap`, or
/// drops to `floor`, or where the step size underflows.
pub fn integrate<F>(mut rhs: F, y0: &[f64], grid: &[f64], opts: &Adaptive) -> Solution
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let mut ys = Vec::with_capacity(grid.len());
    let mut steps = 0;
    if grid.is_empty() {
        return Solution {
            ys,
            blow_up: None,
            steps,
        };
    }
    if !admissible(y0, opts) {
        return Solution {
            ys,
            blow_up: Some(grid[0]),
            steps,
        };
    }
    ys.push(y0.to_vec());

    let mut y = y0.to_vec();
    let mut x = grid[0];
    let mut h = opts.h_max;
    let mut full = vec![0.0; n];
    let mut mid = vec![0.0; n];
    let mut half = vec![0.0; n];
    let mut scratch = Scratch::new(n);

    for &target in &grid[1..] {
        while x < target {
            // The slack keeps a non-final step from leaving a sliver below
            // the rounding resolution of x.
            let last = target - x <= h * (1.0 + 1e-6);
            let step = if last { target - x } else { h };
            if x + 0.5 * step == x {
                if last {
                    x = target;
                    break;
                }
                return Solution {
                    ys,
                    blow_up: Some(x),
                    steps,
                };
            }
            scratch.step(&mut rhs, x, &y, step, &mut full);
            scratch.step(&mut rhs, x, &y, 0.5 * step, &mut mid);
            scratch.step(&mut rhs, x + 0.5 * step, &mid, 0.5 * step, &mut half);
            steps += 1;

            let mut err: f64 = 0.0;
            let mut finite = true;
            for i in 0..n {
                if !half[i].is_finite() || !full[i].is_finite() {
                    finite = false;
                    break;
                }
                let scale = opts.atol + opts.rtol * half[i].abs().max(y[i].abs());
                err = err.max((half[i] - full[i]).abs() / 15.0 / scale);
            }
            if !finite {
                h = 0.25 * step;
                continue;
            }
            if err > 1.0 {
                h = step * (0.9 * err.powf(-0.2)).max(0.1);
                continue;
            }
            for i in 0..n {
                half[i] += (half[i] - full[i]) / 15.0;
            }
            if !admissible(&half, opts) {
                // Bisect toward the exit point until the step is negligible.
                if step > 1e-13 * (1.0 + x.abs()) {
                    h = 0.5 * step;
                    continue;
                }
                return Solution {
                    ys,
                    blow_up: Some(x + step),
                    steps,
                };
            }
            x = if last { target } else { x + step };
            std::mem::swap(&mut y, &mut half);
            if !last {
                let grow = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).min(5.0) };
                h = (step * grow).min(opts.h_max);
            }
        }
        ys.push(y.clone());
    }
    Solution {
        ys,
        blow_up: None,
        steps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn exponential() {
        let grid = linspace(0.0, 2.0, 11);
        let sol = integrate(|_, y, d| d[0] = -y[0], &[1.0], &grid, &Adaptive::default());
        assert!(sol.completed());
        for (x, y) in grid.iter().zip(&sol.ys) {
            assert!((y[0] - (-x).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn tan_blows_up_at_half_pi() {
        let grid = linspace(0.0, 3.0, 4);
        let sol = integrate(|_, y, d| d[0] = 1.0 + y[0] * y[0], &[0.0], &grid, &Adaptive::default());
        let xb = sol.blow_up.unwrap();
        assert!((xb - std::f64::consts::FRAC_PI_2).abs() < 1e-9, "{xb}");
        assert_eq!(sol.ys.len(), 2);
    }

    #[test]
    fn floor_detected() {
        let grid = linspace(0.0, 1.0, 3);
        let opts = Adaptive {
            floor: Some(1e-12),
            ..Adaptive::default()
        };
        // y' = -1 reaches zero at x = 0.5.
        let sol = integrate(|_, _, d| d[0] = -1.0, &[0.5], &grid, &opts);
        let xb = sol.blow_up.unwrap();
        assert!((xb - 0.5).abs() < 1e-9, "{xb}");
    }
}
