//! Free-form strokes: polylines with a width that move and deform over time.

use crate::rng::Rng;

/// One stroke: an ordered set of control points plus motion state.
#[derive(Debug, Clone)]
pub struct StrokeState {
    pub control_points: Vec<(f64, f64)>,
    pub width: f64,
    pub velocity: (f64, f64),
    pub acceleration: (f64, f64),
    pub deform_prob: f64,
    pub deform_radius: f64,
}

/// Sampling ranges for one mask type.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrokeHyper {
    pub points_min: usize,
    pub points_max: usize,
    pub width_min: f64,
    pub width_max: f64,
    pub step_min: f64,
    pub step_max: f64,
    /// Maximum turning angle per walk step, radians.
    pub max_turn: f64,
    pub sigma_velocity: f64,
    pub sigma_acceleration: f64,
    pub deform_prob: f64,
    pub deform_radius: f64,
}

impl Default for StrokeHyper {
    fn default() -> Self {
        StrokeHyper::curve()
    }
}

impl StrokeHyper {
    /// Long thin curve-like strokes: many control points, small width.
    pub fn curve() -> Self {
        StrokeHyper {
            points_min: 8,
            points_max: 16,
            width_min: 3.0,
            width_max: 10.0,
            step_min: 12.0,
            step_max: 40.0,
            max_turn: 1.3,
            sigma_velocity: 1.5,
            sigma_acceleration: 0.3,
            deform_prob: 0.3,
            deform_radius: 3.0,
        }
    }

    /// Scale the pixel-valued parameters. The defaults target 320x180
    /// frames; use this to adapt them to other resolutions.
    pub fn scaled(mut self, factor: f64) -> Self {
        self.width_min *= factor;
        self.width_max *= factor;
        self.step_min *= factor;
        self.step_max *= factor;
        self.sigma_velocity *= factor;
        self.sigma_acceleration *= factor;
        self.deform_radius *= factor;
        self
    }

    /// Round thick object-like blobs: few control points, large width.
    pub fn object() -> Self {
        StrokeHyper {
            points_min: 1,
            points_max: 4,
            width_min: 30.0,
            width_max: 90.0,
            step_min: 15.0,
            step_max: 45.0,
            max_turn: 1.6,
            sigma_velocity: 1.0,
            sigma_acceleration: 0.2,
            deform_prob: 0.3,
            deform_radius: 4.0,
        }
    }
}

/// Frame bounds the stroke is confined to.
#[derive(Debug, Clone, Copy)]
pub struct StrokeBounds {
    pub height: usize,
    pub width: usize,
    /// Keep all masked pixels at least this far from every frame edge.
    pub margin: Option<usize>,
}

impl StrokeBounds {
    /// Allowed control-point interval along one axis. With a margin, points
    /// stay `margin + width/2` away from the edges so the rasterized stroke
    /// cannot reach the border zone. Degenerate boxes collapse to the center.
    fn clamp_box(&self, extent: usize, stroke_radius: f64) -> (f64, f64) {
        let (lo, hi) = match self.margin {
            Some(m) => (
                m as f64 + stroke_radius,
                (extent - 1) as f64 - m as f64 - stroke_radius,
            ),
            None => (0.0, (extent - 1) as f64),
        };
        if hi < lo {
            let mid = (extent - 1) as f64 / 2.0;
            (mid, mid)
        } else {
            (lo, hi)
        }
    }

    fn clamp_point(&self, p: (f64, f64), stroke_radius: f64) -> (f64, f64) {
        let (x_lo, x_hi) = self.clamp_box(self.width, stroke_radius);
        let (y_lo, y_hi) = self.clamp_box(self.height, stroke_radius);
        (p.0.clamp(x_lo, x_hi), p.1.clamp(y_lo, y_hi))
    }
}

/// Draw a fresh stroke: a random walk of control points from a random head
/// position, with Normal(0, sigma) initial velocity and acceleration.
pub fn init_stroke(rng: &mut Rng, hyper: &StrokeHyper, bounds: &StrokeBounds) -> StrokeState {
    let width = rng.range(hyper.width_min, hyper.width_max);
    let radius = width / 2.0;
    let (x_lo, x_hi) = bounds.clamp_box(bounds.width, radius);
    let (y_lo, y_hi) = bounds.clamp_box(bounds.height, radius);

    let n_points = rng.range_usize(hyper.points_min, hyper.points_max);
    let mut points = Vec::with_capacity(n_points);
    let mut head = (
        rng.range(x_lo, x_hi.max(x_lo + 1e-9)),
        rng.range(y_lo, y_hi.max(y_lo + 1e-9)),
    );
    points.push(head);
    let mut angle = rng.range(0.0, std::f64::consts::TAU);
    for _ in 1..n_points {
        angle += rng.range(-hyper.max_turn, hyper.max_turn);
        let step = rng.range(hyper.step_min, hyper.step_max);
        head = bounds.clamp_point(
            (head.0 + step * angle.cos(), head.1 + step * angle.sin()),
            radius,
        );
        points.push(head);
    }

    StrokeState {
        control_points: points,
        width,
        velocity: (
            rng.normal(hyper.sigma_velocity),
            rng.normal(hyper.sigma_velocity),
        ),
        acceleration: (
            rng.normal(hyper.sigma_acceleration),
            rng.normal(hyper.sigma_acceleration),
        ),
        deform_prob: hyper.deform_prob,
        deform_radius: hyper.deform_radius,
    }
}

/// Advance a stroke by one frame: integrate acceleration into velocity, move
/// every control point by the velocity, then deform each point by a uniform
/// per-axis offset within the deform radius with probability `deform_prob`.
pub fn evolve_stroke(state: &StrokeState, rng: &mut Rng, bounds: &StrokeBounds) -> StrokeState {
    let mut next = state.clone();
    next.velocity.0 += next.acceleration.0;
    next.velocity.1 += next.acceleration.1;
    let radius = next.width / 2.0;
    for p in &mut next.control_points {
        p.0 += next.velocity.0;
        p.1 += next.velocity.1;
        if state.deform_prob > 0.0 && rng.chance(state.deform_prob) {
            p.0 += rng.range(-state.deform_radius, state.deform_radius);
            p.1 += rng.range(-state.deform_radius, state.deform_radius);
        }
        *p = bounds.clamp_point(*p, radius);
    }
    next
}

#[inline]
fn dist_sq_point_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let (apx, apy) = (p.0 - a.0, p.1 - a.1);
    let len_sq = abx * abx + aby * aby;
    let t = if len_sq > 0.0 {
        ((apx * abx + apy * aby) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let dx = apx - t * abx;
    let dy = apy - t * aby;
    dx * dx + dy * dy
}

/// Mark every pixel within width/2 of the stroke polyline (discs at the
/// control points, capsules along consecutive segments). `frame` is a
/// row-major height x width buffer of 0/1 bytes; newly set pixels are counted
/// into the return value.
pub fn rasterize_stroke(
    state: &StrokeState,
    height: usize,
    width: usize,
    frame: &mut [u8],
) -> usize {
    debug_assert_eq!(frame.len(), height * width);
    let r = state.width / 2.0;
    let r_sq = r * r;
    let mut newly_set = 0;

    let stamp = |x0: f64,
                 y0: f64,
                 x1: f64,
                 y1: f64,
                 a: (f64, f64),
                 b: (f64, f64),
                 frame: &mut [u8],
                 newly_set: &mut usize| {
        let px_lo = (x0.min(x1) - r - 1.0).floor().max(0.0) as usize;
        let px_hi = ((x0.max(x1) + r + 1.0).ceil() as usize).min(width.saturating_sub(1));
        let py_lo = (y0.min(y1) - r - 1.0).floor().max(0.0) as usize;
        let py_hi = ((y0.max(y1) + r + 1.0).ceil() as usize).min(height.saturating_sub(1));
        for py in py_lo..=py_hi {
            for px in px_lo..=px_hi {
                let cell = &mut frame[py * width + px];
                if *cell == 0 && dist_sq_point_segment((px as f64, py as f64), a, b) <= r_sq {
                    *cell = 1;
                    *newly_set += 1;
                }
            }
        }
    };

    for window in state.control_points.windows(2) {
        let (a, b) = (window[0], window[1]);
        stamp(a.0, a.1, b.0, b.1, a, b, frame, &mut newly_set);
    }
    for &p in &state.control_points {
        stamp(p.0, p.1, p.0, p.1, p, p, frame, &mut newly_set);
    }
    newly_set
}
