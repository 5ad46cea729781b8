//! Grid traversal along rays (Amanatides–Woo). Shared by the renderer and the
//! belief-map integrator so both visit exactly the same cell sequence.

/// Global integer cell index of a coordinate.
pub fn cell_of(v: f64, res: f64) -> i64 {
    (v / res).floor() as i64
}

/// Visits the cells pierced by the ray `origin + t * dir` for `t` in `[0, max_t]`,
/// in order, passing `(i, j, t_enter)`. Stops early when `visit` returns false.
/// At exact corner crossings the x step is taken first.
pub fn traverse_2d(origin: [f64; 2], dir: [f64; 2], res: f64, max_t: f64, mut visit: impl FnMut(i64, i64, f64) -> bool) {
    let mut i = cell_of(origin[0], res);
    let mut j = cell_of(origin[1], res);
    let (step_i, mut t_max_x, t_delta_x) = axis_setup(origin[0], dir[0], res, i);
    let (step_j, mut t_max_y, t_delta_y) = axis_setup(origin[1], dir[1], res, j);
    let mut t_enter = 0.0;
    loop {
        if t_enter > max_t || !visit(i, j, t_enter) {
            return;
        }
        if t_max_x <= t_max_y {
            i += step_i;
            t_enter = t_max_x;
            t_max_x += t_delta_x;
        } else {
            j += step_j;
            t_enter = t_max_y;
            t_max_y += t_delta_y;
        }
        if !t_enter.is_finite() {
            return;
        }
    }
}

/// 3-D counterpart of [`traverse_2d`]; ties resolve x, then y, then z.
pub fn traverse_3d(origin: [f64; 3], dir: [f64; 3], res: f64, max_t: f64, mut visit: impl FnMut([i64; 3], f64) -> bool) {
    let mut c = [cell_of(origin[0], res), cell_of(origin[1], res), cell_of(origin[2], res)];
    let mut step = [0i64; 3];
    let mut t_max = [0.0; 3];
    let mut t_delta = [0.0; 3];
    for a in 0..3 {
        let (s, m, d) = axis_setup(origin[a], dir[a], res, c[a]);
        step[a] = s;
        t_max[a] = m;
        t_delta[a] = d;
    }
    let mut t_enter = 0.0;
    loop {
        if t_enter > max_t || !visit(c, t_enter) {
            return;
        }
        let a = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        c[a] += step[a];
        t_enter = t_max[a];
        t_max[a] += t_delta[a];
        if !t_enter.is_finite() {
            return;
        }
    }
}

fn axis_setup(o: f64, d: f64, res: f64, cell: i64) -> (i64, f64, f64) {
    if d > 0.0 {
        let boundary = (cell + 1) as f64 * res;
        (1, (boundary - o) / d, res / d)
    } else if d < 0.0 {
        let boundary = cell as f64 * res;
        (-1, (boundary - o) / d, -res / d)
    } else {
        (0, f64::INFINITY, f64::INFINITY)
    }
}
