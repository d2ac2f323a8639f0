//! Fully symmetric preliminary grids in standardized coordinates.
//!
//! A grid is a union of orbits. Each orbit is generated by a multiset of
//! positive magnitudes and holds every point obtained by placing those
//! magnitudes in distinct coordinates with every sign pattern.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{positive, Error, Result};
use crate::integrand::GaussianApprox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridFamily {
    Cross2d,
    Ckf,
    Gh2,
    Custom,
}

impl GridFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            GridFamily::Cross2d => "cross2d",
            GridFamily::Ckf => "ckf",
            GridFamily::Gh2 => "gh2",
            GridFamily::Custom => "custom",
        }
    }
}

impl std::str::FromStr for GridFamily {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "cross2d" => Ok(GridFamily::Cross2d),
            "ckf" => Ok(GridFamily::Ckf),
            "gh2" => Ok(GridFamily::Gh2),
            "custom" => Ok(GridFamily::Custom),
            other => Err(format!("unknown grid family `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Orbit {
    /// Nonzero magnitudes, ascending. Empty for the origin.
    pub generator: Vec<f64>,
    pub points: Vec<Vec<f64>>,
}

impl Orbit {
    pub fn size(&self) -> usize {
        self.points.len()
    }

    /// Euclidean norm shared by every point in the orbit.
    pub fn radius(&self) -> f64 {
        self.generator.iter().fold(0.0, |acc, g| acc + g * g).sqrt()
    }

    pub fn representative(&self) -> &[f64] {
        &self.points[0]
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Every distinct placement/sign image of `generator` in `R^d`, in
/// lexicographic order. An empty generator yields the origin.
pub fn expand_orbit(generator: &[f64], d: usize) -> Result<Orbit> {
    if generator.len() > d {
        return Err(Error::GeneratorTooLong { len: generator.len(), dim: d });
    }
    if generator.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
        return Err(Error::InvalidGenerator);
    }
    let mut gen = generator.to_vec();
    gen.sort_by(|a, b| a.total_cmp(b));

    // Keys are bit patterns so that the set dedupes exactly.
    let mut seen: BTreeSet<Vec<u64>> = BTreeSet::new();
    let mut points = Vec::new();
    let mut current = vec![0.0; d];
    let mut used = vec![false; d];
    place(&gen, 0, &mut current, &mut used, &mut |p: &[f64]| {
        let key: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
        if seen.insert(key) {
            points.push(p.to_vec());
        }
    });
    points.sort_by(|a, b| lex_cmp(a, b));
    Ok(Orbit { generator: gen, points })
}

fn place(gen: &[f64], k: usize, current: &mut [f64], used: &mut [bool], emit: &mut dyn FnMut(&[f64])) {
    if k == gen.len() {
        emit(current);
        return;
    }
    for slot in 0..current.len() {
        if used[slot] {
            continue;
        }
        used[slot] = true;
        for sign in [-1.0, 1.0] {
            current[slot] = sign * gen[k];
            place(gen, k + 1, current, used, emit);
        }
        current[slot] = 0.0;
        used[slot] = false;
    }
}

/// A union of fully symmetric orbits.
#[derive(Debug, Clone, PartialEq)]
pub struct PreliminaryGrid {
    pub dim: usize,
    pub family: GridFamily,
    /// Multiplier applied to the base generators (1 for unscaled families).
    pub scale: f64,
    pub orbits: Vec<Orbit>,
}

impl PreliminaryGrid {
    /// Assemble a grid from generators. Orbits are sorted by generator.
    pub fn from_generators(dim: usize, family: GridFamily, scale: f64, generators: &[Vec<f64>]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter { name: "dim", value: 0.0 });
        }
        let mut orbits = generators.iter().map(|g| expand_orbit(g, dim)).collect::<Result<Vec<_>>>()?;
        orbits.sort_by(|a, b| lex_cmp(&a.generator, &b.generator));
        let mut seen = BTreeSet::new();
        for p in orbits.iter().flat_map(|o| &o.points) {
            if !seen.insert(p.iter().map(|v| v.to_bits()).collect::<Vec<_>>()) {
                return Err(Error::DuplicatePoints);
            }
        }
        Ok(Self { dim, family, scale, orbits })
    }

    pub fn n(&self) -> usize {
        self.orbits.iter().map(Orbit::size).sum()
    }

    pub fn points(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.orbits.iter().flat_map(|o| o.points.iter())
    }

    /// Orbit index of every point, in point order.
    pub fn orbit_labels(&self) -> Vec<usize> {
        self.orbits.iter().enumerate().flat_map(|(k, o)| std::iter::repeat_n(k, o.size())).collect()
    }

    /// True if some orbit lies on the coordinate axes.
    pub fn has_axis_orbit(&self) -> bool {
        self.orbits.iter().any(|o| o.generator.len() == 1)
    }

    /// True if every point lies on a coordinate axis (or is the origin).
    pub fn is_axis_only(&self) -> bool {
        self.orbits.iter().all(|o| o.generator.len() <= 1)
    }

    pub fn centroid(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        for p in self.points() {
            for (ci, pi) in c.iter_mut().zip(p) {
                *ci += pi;
            }
        }
        let n = self.n() as f64;
        c.iter_mut().for_each(|v| *v /= n);
        c
    }

    pub fn to_spec(&self) -> GridSpec {
        GridSpec {
            dim: self.dim,
            family: self.family,
            scale: self.scale,
            orbits: self
                .orbits
                .iter()
                .map(|o| OrbitSpec { generator: o.generator.clone(), size: o.size() })
                .collect(),
        }
    }
}

/// Serialized form of a grid; points are regenerated on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub family: GridFamily,
    pub scale: f64,
    pub orbits: Vec<OrbitSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitSpec {
    pub generator: Vec<f64>,
    pub size: usize,
}

impl GridSpec {
    pub fn build(&self) -> Result<PreliminaryGrid> {
        let generators: Vec<Vec<f64>> = self.orbits.iter().map(|o| o.generator.clone()).collect();
        let grid = PreliminaryGrid::from_generators(self.dim, self.family, self.scale, &generators)?;
        for (o, spec) in grid.orbits.iter().zip(&self.orbits) {
            if o.size() != spec.size {
                return Err(Error::InvalidParameter { name: "orbit size", value: spec.size as f64 });
            }
        }
        Ok(grid)
    }
}

/// `{0} ∪ {±m·eᵢ : m ∈ {1,2,3}}` in two dimensions.
pub fn cross2d_grid() -> PreliminaryGrid {
    PreliminaryGrid::from_generators(2, GridFamily::Cross2d, 1.0, &[vec![], vec![1.0], vec![2.0], vec![3.0]])
        .expect("static generators")
}

/// `{0} ∪ {±√d·eᵢ}`: the cubature-Kalman-filter point set plus the origin.
pub fn ckf_grid(d: usize) -> Result<PreliminaryGrid> {
    if d == 0 {
        return Err(Error::InvalidParameter { name: "dim", value: 0.0 });
    }
    PreliminaryGrid::from_generators(d, GridFamily::Ckf, 1.0, &[vec![], vec![(d as f64).sqrt()]])
}

/// Positive nodes of the `n`-point Gauss–Hermite rule for the weight
/// `exp(−x²/2)`, via the Golub–Welsch eigenvalue problem.
pub fn gauss_hermite_nodes(n: usize) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let mut jacobi = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jacobi[(k, k - 1)] = b;
        jacobi[(k - 1, k)] = b;
    }
    let mut nodes: Vec<f64> = jacobi.symmetric_eigen().eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.total_cmp(b));
    nodes
}

/// Order-2 sparse Gauss–Hermite grid without the origin, scaled by `scale`.
///
/// The level-2 univariate rule contributes the node `a` (orbits `(a)` and
/// `(a,a)`); the level-3 rule contributes `b` (orbit `(b)`). Size is
/// `4d + 4·C(d,2)`.
pub fn gh2_grid(d: usize, scale: f64) -> Result<PreliminaryGrid> {
    if d < 2 {
        return Err(Error::InvalidParameter { name: "dim", value: d as f64 });
    }
    let scale = positive("scale", scale)?;
    let a = *gauss_hermite_nodes(2).last().expect("two nodes") * scale;
    let b = *gauss_hermite_nodes(3).last().expect("three nodes") * scale;
    PreliminaryGrid::from_generators(d, GridFamily::Gh2, scale, &[vec![a], vec![a, a], vec![b]])
}

/// A grid from arbitrary generators. Cross-shaped grids with several
/// magnitudes per axis are known to behave poorly as `d` grows.
pub fn custom_grid(d: usize, generators: &[Vec<f64>]) -> Result<PreliminaryGrid> {
    PreliminaryGrid::from_generators(d, GridFamily::Custom, 1.0, generators)
}

/// Interrogation points `sᵢ = T·s*ᵢ + x̂`, in preliminary-grid order.
#[derive(Debug, Clone)]
pub struct InterrogationGrid {
    /// `n × d`.
    pub points: DMatrix<f64>,
    pub standardized: Vec<Vec<f64>>,
}

impl InterrogationGrid {
    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.points.nrows()).map(|i| self.points.row(i).iter().copied().collect()).collect()
    }
}

pub fn to_interrogation(grid: &PreliminaryGrid, approx: &GaussianApprox) -> Result<InterrogationGrid> {
    if grid.dim != approx.dim() {
        return Err(Error::DimensionMismatch { expected: approx.dim(), got: grid.dim });
    }
    let standardized: Vec<Vec<f64>> = grid.points().cloned().collect();
    let mut points = DMatrix::zeros(standardized.len(), grid.dim);
    for (i, s) in standardized.iter().enumerate() {
        let x = &approx.transform * DVector::from_column_slice(s) + &approx.mode;
        points.set_row(i, &x.transpose());
    }
    Ok(InterrogationGrid { points, standardized })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrand::{gaussian_approx, Banana, IntegrandSpec};
    use approx::assert_relative_eq;

    fn binom2(d: usize) -> usize {
        d * (d - 1) / 2
    }

    #[test]
    fn axis_orbit() {
        let o = expand_orbit(&[1.0], 3).unwrap();
        assert_eq!(o.size(), 6);
        for p in &o.points {
            assert_eq!(p.iter().filter(|v| **v != 0.0).count(), 1);
            assert_eq!(p.iter().map(|v| v.abs()).sum::<f64>(), 1.0);
        }
        assert!(o.points.windows(2).all(|w| lex_cmp(&w[0], &w[1]) == Ordering::Less));
    }

    #[test]
    fn pair_orbit_counts() {
        assert_eq!(expand_orbit(&[0.7, 0.7], 72).unwrap().size(), 4 * binom2(72));
        assert_eq!(expand_orbit(&[0.7, 0.7], 72).unwrap().size(), 10224);
        assert_eq!(expand_orbit(&[1.0, 2.0], 2).unwrap().size(), 8);
        assert_eq!(expand_orbit(&[1.0, 2.0], 4).unwrap().size(), 4 * 3 * 4);
        for d in 2..8 {
            assert_eq!(expand_orbit(&[1.5], d).unwrap().size(), 2 * d);
            assert_eq!(expand_orbit(&[1.5, 1.5], d).unwrap().size(), 4 * binom2(d));
        }
    }

    #[test]
    fn orbit_generator_errors() {
        assert!(matches!(expand_orbit(&[1.0, 1.0, 1.0], 2), Err(Error::GeneratorTooLong { .. })));
        assert!(matches!(expand_orbit(&[0.0], 2), Err(Error::InvalidGenerator)));
        assert!(matches!(expand_orbit(&[-1.0], 2), Err(Error::InvalidGenerator)));
        let origin = expand_orbit(&[], 3).unwrap();
        assert_eq!(origin.points, vec![vec![0.0; 3]]);
    }

    #[test]
    fn orbit_points_match_generator() {
        let o = expand_orbit(&[2.0, 0.5], 4).unwrap();
        for p in &o.points {
            let mut mags: Vec<f64> = p.iter().filter(|v| **v != 0.0).map(|v| v.abs()).collect();
            mags.sort_by(|a, b| a.total_cmp(b));
            assert_eq!(mags, o.generator);
        }
    }

    #[test]
    fn cross2d() {
        let g = cross2d_grid();
        assert_eq!(g.n(), 13);
        assert_eq!(g.orbits.len(), 4);
        assert!(g.points().any(|p| p == &vec![0.0, 0.0]));
        assert!(g.points().any(|p| p == &vec![-3.0, 0.0]));
        assert!(g.has_axis_orbit() && g.is_axis_only());
    }

    #[test]
    fn ckf() {
        let g = ckf_grid(72).unwrap();
        assert_eq!(g.n(), 145);
        assert_eq!(g.orbits.len(), 2);
        let g1 = ckf_grid(1).unwrap();
        let pts: Vec<_> = g1.points().cloned().collect();
        assert_eq!(pts, vec![vec![0.0], vec![-1.0], vec![1.0]]);
        let g5 = ckf_grid(5).unwrap();
        for p in g5.points().filter(|p| p.iter().any(|v| *v != 0.0)) {
            assert!((p.iter().map(|v| v * v).sum::<f64>() - 5.0).abs() < 1e-14);
        }
    }

    #[test]
    fn hermite_nodes() {
        assert_relative_eq!(gauss_hermite_nodes(2)[1], 1.0, epsilon = 1e-14);
        let n3 = gauss_hermite_nodes(3);
        assert!(n3[1].abs() < 1e-14);
        assert_relative_eq!(n3[2], 3f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn gh2_sizes() {
        let g = gh2_grid(72, 3.6).unwrap();
        assert_eq!(g.n(), 10512);
        let nearest = g.orbits.iter().min_by(|a, b| a.radius().total_cmp(&b.radius())).unwrap();
        assert_eq!(nearest.size(), 144);
        assert_eq!(g.n() - nearest.size(), 10368);
        assert_eq!(gh2_grid(2, 1.0).unwrap().n(), 12);
        for d in [2, 3, 5, 10, 72] {
            assert_eq!(gh2_grid(d, 3.6).unwrap().n(), 4 * d + 4 * binom2(d));
        }
        assert!(gh2_grid(1, 3.6).is_err());
        assert!(gh2_grid(3, 0.0).is_err());
    }

    #[test]
    fn centroids_vanish() {
        for g in [cross2d_grid(), ckf_grid(7).unwrap(), gh2_grid(5, 3.6).unwrap(), gh2_grid(72, 3.6).unwrap()] {
            for c in g.centroid() {
                assert!(c.abs() < 1e-13, "centroid {c}");
            }
        }
    }

    #[test]
    fn duplicates_rejected() {
        assert!(matches!(custom_grid(2, &[vec![1.0], vec![1.0]]), Err(Error::DuplicatePoints)));
    }

    #[test]
    fn spec_round_trip() {
        let g = gh2_grid(4, 3.6).unwrap();
        let json = serde_json::to_string(&g.to_spec()).unwrap();
        let back: GridSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back.build().unwrap(), g);
    }

    #[test]
    fn interrogation_maps() {
        let spec = IntegrandSpec::new(
            std::sync::Arc::new(crate::integrand::FnDensity::new(2, |_x: &[f64]| 0.0)),
            vec![5.0, 5.0],
            DMatrix::from_diagonal(&DVector::from_vec(vec![-0.25, -1.0])),
        )
        .unwrap();
        let ga = gaussian_approx(&spec).unwrap();
        let grid = ckf_grid(2).unwrap();
        let ig = to_interrogation(&grid, &ga).unwrap();
        let idx = grid.points().position(|p| p == &vec![2f64.sqrt(), 0.0]).unwrap();
        assert_relative_eq!(ig.points[(idx, 0)], 2.0 * 2f64.sqrt() + 5.0, epsilon = 1e-12);
        assert_relative_eq!(ig.points[(idx, 1)], 5.0, epsilon = 1e-12);
        for (row, s) in ig.rows().iter().zip(&ig.standardized) {
            let back = ga.to_standardized(row);
            for (a, b) in back.iter().zip(s) {
                assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
            }
        }
        assert!(to_interrogation(&ckf_grid(3).unwrap(), &ga).is_err());
    }

    #[test]
    fn banana_cross_points_follow_principal_axes() {
        let ga = gaussian_approx(&Banana.spec().unwrap()).unwrap();
        let ig = to_interrogation(&cross2d_grid(), &ga).unwrap();
        for (row, s) in ig.rows().iter().zip(&ig.standardized) {
            // V = I for the banana, so x = x̂ + (√3·s₁, s₂)
            assert_relative_eq!(row[0], 3f64.sqrt() * s[0], epsilon = 1e-12);
            assert_relative_eq!(row[1], -1.5 + s[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn identity_transform_is_noop() {
        let spec = crate::integrand::Gaussian::standard(2).spec().unwrap();
        let ga = gaussian_approx(&spec).unwrap();
        let ig = to_interrogation(&cross2d_grid(), &ga).unwrap();
        for (row, s) in ig.rows().iter().zip(&ig.standardized) {
            assert_eq!(row, s);
        }
    }
}
