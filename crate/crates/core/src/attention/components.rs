use serde::{Deserialize, Serialize};

use super::grid::{Grid, Mask, PixelBox};
use crate::error::{Error, Result};

/// One 8-connected region of a mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    /// Cell indices (row-major), ascending.
    pub pixels: Vec<usize>,
    pub bbox: PixelBox,
    /// Sum of the score grid over `pixels`.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionSet {
    pub mask: Mask,
    /// Highest cumulative score first; ties by first cell in raster order.
    pub components: Vec<Component>,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

/// Two-pass union-find labelling with 8-connectivity.
pub fn connected_components(mask: &Mask, scores: &Grid) -> Result<RegionSet> {
    if (mask.width, mask.height) != (scores.width, scores.height) {
        return Err(Error::DimensionMismatch(format!(
            "mask is {}x{}, scores are {}x{}",
            mask.width, mask.height, scores.width, scores.height
        )));
    }
    let (w, h) = (mask.width, mask.height);
    let mut parent: Vec<usize> = (0..w * h).collect();

    // Each set cell joins the already-visited neighbours: W, NW, N, NE.
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let i = y * w + x;
            if x > 0 && mask.get(x - 1, y) {
                union(&mut parent, i, i - 1);
            }
            if y > 0 {
                let up = i - w;
                if x > 0 && mask.get(x - 1, y - 1) {
                    union(&mut parent, i, up - 1);
                }
                if mask.get(x, y - 1) {
                    union(&mut parent, i, up);
                }
                if x + 1 < w && mask.get(x + 1, y - 1) {
                    union(&mut parent, i, up + 1);
                }
            }
        }
    }

    // Roots are the smallest index of their set, so raster order of first
    // appearance equals order of roots.
    let mut slot = vec![usize::MAX; w * h];
    let mut components: Vec<Component> = Vec::new();
    for i in 0..w * h {
        if !mask.data[i] {
            continue;
        }
        let root = find(&mut parent, i);
        let (x, y) = (i % w, i / w);
        if slot[root] == usize::MAX {
            slot[root] = components.len();
            components.push(Component {
                pixels: Vec::new(),
                bbox: PixelBox::cell(x, y),
                score: 0.0,
            });
        }
        let c = &mut components[slot[root]];
        c.pixels.push(i);
        c.bbox = c.bbox.union(&PixelBox::cell(x, y));
        c.score += scores.data[i];
    }
    // stable sort keeps raster order among equal scores
    components.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(RegionSet {
        mask: mask.clone(),
        components,
    })
}

/// Union of the first `min(k, count)` components.
pub fn select_regions(rs: &RegionSet, k: usize) -> Result<Mask> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let mut out = Mask::empty(rs.mask.width, rs.mask.height);
    for c in rs.components.iter().take(k) {
        for &i in &c.pixels {
            out.data[i] = true;
        }
    }
    Ok(out)
}
