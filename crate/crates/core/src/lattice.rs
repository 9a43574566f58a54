//! Lattice points, canonical bonds and unit directions on Z^d.

use std::fmt;

use smallvec::SmallVec;

/// A point of Z^d. Stored inline for d <= 4.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Site(SmallVec<[i64; 4]>);

impl Site {
    pub fn origin(dim: usize) -> Self {
        Site(SmallVec::from_elem(0, dim))
    }

    pub fn from_coords(coords: &[i64]) -> Self {
        Site(SmallVec::from_slice(coords))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn l1_norm(&self) -> u64 {
        self.0.iter().map(|c| c.unsigned_abs()).sum()
    }

    pub fn is_origin(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn shift(&mut self, dir: Direction) {
        self.0[dir.axis] += dir.sign();
    }

    pub fn shifted(&self, dir: Direction) -> Site {
        let mut s = self.clone();
        s.shift(dir);
        s
    }

    pub fn negated(&self) -> Site {
        Site(self.0.iter().map(|c| -c).collect())
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.coords())
    }
}

impl fmt::Display for Site {
    /// Coordinates joined by `;`, so a site fits in one CSV field.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// A unit step along one axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Direction {
    pub axis: usize,
    pub positive: bool,
}

impl Direction {
    pub fn sign(self) -> i64 {
        if self.positive {
            1
        } else {
            -1
        }
    }

    pub fn reversed(self) -> Direction {
        Direction {
            axis: self.axis,
            positive: !self.positive,
        }
    }
}

/// The edge between `site` and `site + e_axis`. `site` is the endpoint with
/// the smaller coordinate along `axis`; in 1D bond `i` joins `i` and `i + 1`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bond {
    pub site: Site,
    pub axis: usize,
}

impl Bond {
    /// The bond crossed when stepping from `from` in direction `dir`.
    pub fn incident(from: &Site, dir: Direction) -> Bond {
        let site = if dir.positive { from.clone() } else { from.shifted(dir) };
        Bond { site, axis: dir.axis }
    }

    /// Image of the bond under x -> -x.
    pub fn mirrored(&self) -> Bond {
        let mut site = self.site.negated();
        site.0[self.axis] -= 1;
        Bond { site, axis: self.axis }
    }
}

impl fmt::Debug for Bond {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Bond({:?}, axis {})", self.site, self.axis)
    }
}
