use std::collections::HashMap;

/// Uniform grid over the xy-plane for radius queries.
#[derive(Clone, Debug)]
pub(crate) struct PointGrid {
    cell: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
    points: Vec<[f64; 2]>,
}

impl PointGrid {
    pub(crate) fn new(cell: f64, points: impl IntoIterator<Item = [f64; 2]>) -> Self {
        let mut grid = Self {
            cell,
            cells: HashMap::new(),
            points: Vec::new(),
        };
        for p in points {
            let key = grid.key(p);
            grid.cells.entry(key).or_default().push(grid.points.len());
            grid.points.push(p);
        }
        grid
    }

    fn key(&self, p: [f64; 2]) -> (i64, i64) {
        (
            (p[0] / self.cell).floor() as i64,
            (p[1] / self.cell).floor() as i64,
        )
    }

    /// Indices of points within `radius` of `center`, ascending.
    pub(crate) fn within(&self, center: [f64; 2], radius: f64) -> Vec<usize> {
        let lo = self.key([center[0] - radius, center[1] - radius]);
        let hi = self.key([center[0] + radius, center[1] + radius]);
        let mut out = Vec::new();
        for cx in lo.0..=hi.0 {
            for cy in lo.1..=hi.1 {
                let Some(bucket) = self.cells.get(&(cx, cy)) else {
                    continue;
                };
                for &i in bucket {
                    let p = self.points[i];
                    let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
                    if dx * dx + dy * dy <= radius * radius {
                        out.push(i);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<[f64; 2]> = (0..500)
            .map(|_| {
                [
                    rng.random_range(-100.0..100.0),
                    rng.random_range(-100.0..100.0),
                ]
            })
            .collect();
        let grid = PointGrid::new(6.0, pts.iter().copied());
        for _ in 0..200 {
            let c = [
                rng.random_range(-110.0..110.0),
                rng.random_range(-110.0..110.0),
            ];
            let r = rng.random_range(0.0..20.0);
            let expected: Vec<usize> = (0..pts.len())
                .filter(|&i| (pts[i][0] - c[0]).powi(2) + (pts[i][1] - c[1]).powi(2) <= r * r)
                .collect();
            assert_eq!(grid.within(c, r), expected);
        }
    }
}
