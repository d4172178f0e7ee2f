//! Mapping from original grid positions to reduced-grid positions.

use std::io::Write;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeMap {
    orig_h: usize,
    orig_w: usize,
    new_h: usize,
    new_w: usize,
    /// Flat reduced index for every flat original index.
    targets: Vec<usize>,
}

impl MergeMap {
    /// Validates totality and surjectivity.
    pub fn new(orig: (usize, usize), new: (usize, usize), targets: Vec<usize>) -> Result<Self> {
        let (orig_h, orig_w) = orig;
        let (new_h, new_w) = new;
        if targets.len() != orig_h * orig_w {
            return Err(Error::ShapeMismatch(format!(
                "map over {orig_h}x{orig_w} needs {} entries, got {}",
                orig_h * orig_w,
                targets.len()
            )));
        }
        let n_new = new_h * new_w;
        let mut hit = vec![false; n_new];
        for &t in &targets {
            if t >= n_new {
                return Err(Error::ShapeMismatch(format!(
                    "target {t} outside reduced {new_h}x{new_w} grid"
                )));
            }
            hit[t] = true;
        }
        if let Some(miss) = hit.iter().position(|h| !h) {
            return Err(Error::ShapeMismatch(format!(
                "reduced position {miss} has no preimage"
            )));
        }
        Ok(Self {
            orig_h,
            orig_w,
            new_h,
            new_w,
            targets,
        })
    }

    pub fn identity(height: usize, width: usize) -> Self {
        Self {
            orig_h: height,
            orig_w: width,
            new_h: height,
            new_w: width,
            targets: (0..height * width).collect(),
        }
    }

    pub fn orig_shape(&self) -> (usize, usize) {
        (self.orig_h, self.orig_w)
    }

    pub fn reduced_shape(&self) -> (usize, usize) {
        (self.new_h, self.new_w)
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn target(&self, row: usize, col: usize) -> (usize, usize) {
        let t = self.targets[row * self.orig_w + col];
        (t / self.new_w, t % self.new_w)
    }

    pub fn is_identity(&self) -> bool {
        self.orig_h == self.new_h
            && self.orig_w == self.new_w
            && self.targets.iter().enumerate().all(|(i, &t)| i == t)
    }

    /// Follows `self` then `next`.
    pub fn compose(&self, next: &MergeMap) -> Result<MergeMap> {
        if self.reduced_shape() != next.orig_shape() {
            return Err(Error::ShapeMismatch(format!(
                "cannot compose map into {}x{} with map from {}x{}",
                self.new_h, self.new_w, next.orig_h, next.orig_w
            )));
        }
        Ok(MergeMap {
            orig_h: self.orig_h,
            orig_w: self.orig_w,
            new_h: next.new_h,
            new_w: next.new_w,
            targets: self.targets.iter().map(|&t| next.targets[t]).collect(),
        })
    }

    /// Number of original positions landing on each reduced position.
    pub fn preimage_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.new_h * self.new_w];
        for &t in &self.targets {
            counts[t] += 1;
        }
        counts
    }

    pub fn max_preimage(&self) -> usize {
        self.preimage_counts().into_iter().max().unwrap_or(0)
    }

    /// Along every original row, reduced columns never decrease and tokens
    /// that stay distinct keep their left-to-right order. Requires the row
    /// index to be preserved, which holds for maps whose last phase is
    /// horizontal or whose vertical phase maps columns onto themselves.
    pub fn preserves_row_order(&self) -> bool {
        (0..self.orig_h).all(|r| {
            let targets: Vec<(usize, usize)> = (0..self.orig_w).map(|c| self.target(r, c)).collect();
            targets.windows(2).all(|w| {
                let ((ra, ca), (rb, cb)) = (w[0], w[1]);
                (ra, ca) == (rb, cb) || ca < cb
            })
        })
    }

    /// Column counterpart of [`MergeMap::preserves_row_order`].
    pub fn preserves_column_order(&self) -> bool {
        (0..self.orig_w).all(|c| {
            let targets: Vec<(usize, usize)> = (0..self.orig_h).map(|r| self.target(r, c)).collect();
            targets.windows(2).all(|w| {
                let ((ra, ca), (rb, cb)) = (w[0], w[1]);
                (ra, ca) == (rb, cb) || ra < rb
            })
        })
    }

    /// Transposed map: original and reduced grids both transposed.
    pub fn transpose(&self) -> MergeMap {
        let mut targets = vec![0; self.targets.len()];
        for r in 0..self.orig_h {
            for c in 0..self.orig_w {
                let (nr, nc) = self.target(r, c);
                targets[c * self.orig_h + r] = nc * self.new_h + nr;
            }
        }
        MergeMap {
            orig_h: self.orig_w,
            orig_w: self.orig_h,
            new_h: self.new_w,
            new_w: self.new_h,
            targets,
        }
    }

    /// CSV with header `orig_row,orig_col,new_row,new_col`, one line per
    /// original position in row-major order.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["orig_row", "orig_col", "new_row", "new_col"])?;
        for r in 0..self.orig_h {
            for c in 0..self.orig_w {
                let (nr, nc) = self.target(r, c);
                w.write_record([r.to_string(), c.to_string(), nr.to_string(), nc.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

/// Places per-window maps into one global map.
///
/// Window `i` covers input tile `(i / in_cols, i % in_cols)` of an
/// `in_rows x in_cols` tiling and lands in output tile
/// `(i / out_cols, i % out_cols)` of an `out_rows x out_cols` tiling.
pub fn lift_window_maps(maps: &[MergeMap], in_tiles: (usize, usize), out_tiles: (usize, usize)) -> Result<MergeMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no window maps".into()))?;
    if maps.len() != in_tiles.0 * in_tiles.1 || maps.len() != out_tiles.0 * out_tiles.1 {
        return Err(Error::ShapeMismatch(format!(
            "{} window maps do not fill {}x{} -> {}x{} tilings",
            maps.len(),
            in_tiles.0,
            in_tiles.1,
            out_tiles.0,
            out_tiles.1
        )));
    }
    let (ih, iw) = first.orig_shape();
    let (oh, ow) = first.reduced_shape();
    if maps.iter().any(|m| m.orig_shape() != (ih, iw) || m.reduced_shape() != (oh, ow)) {
        return Err(Error::ShapeMismatch("window maps differ in shape".into()));
    }
    let (gh, gw) = (in_tiles.0 * ih, in_tiles.1 * iw);
    let (nh, nw) = (out_tiles.0 * oh, out_tiles.1 * ow);
    let mut targets = vec![0; gh * gw];
    for (i, m) in maps.iter().enumerate() {
        let (ir, ic) = (i / in_tiles.1, i % in_tiles.1);
        let (or, oc) = (i / out_tiles.1, i % out_tiles.1);
        for r in 0..ih {
            for c in 0..iw {
                let (nr, nc) = m.target(r, c);
                targets[(ir * ih + r) * gw + ic * iw + c] = (or * oh + nr) * nw + oc * ow + nc;
            }
        }
    }
    MergeMap::new((gh, gw), (nh, nw), targets)
}
