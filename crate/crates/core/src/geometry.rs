//! Binary masks and the geometric primitives the risk scorers are built on.
//!
//! Coordinates are pixel indices with `x` growing right and `y` growing down.
//! Angles are measured with `atan2(dy, dx)` in that frame and mapped to
//! `[0, 360)` degrees, so 90° points down the image.

use std::collections::VecDeque;
use std::fmt;

use image::GrayImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Stored 8-bit values at or above this are foreground.
pub const BINARIZE_THRESHOLD: u8 = 128;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("mask has no set pixels")]
    EmptyMask,
    #[error("point list is empty")]
    EmptyInput,
    #[error("sector count must be at least 2, got {0}")]
    TooFewSectors(usize),
}

/// A width×height grid of on/off pixels.
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BinaryMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("set", &self.count())
            .finish()
    }
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Binarizes an 8-bit image: values `>= 128` become foreground.
    pub fn from_gray(image: &GrayImage) -> Self {
        Self {
            width: image.width(),
            height: image.height(),
            data: image
                .as_raw()
                .iter()
                .map(|&v| v >= BINARIZE_THRESHOLD)
                .collect(),
        }
    }

    /// Renders the mask in the on-disk encoding (0 background, 255 foreground).
    pub fn to_gray(&self) -> GrayImage {
        let raw = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        GrayImage::from_raw(self.width, self.height, raw).expect("buffer sized from dimensions")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[self.index(x, y)]
    }

    /// Like [`get`](Self::get) but treats out-of-range coordinates as unset.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            false
        } else {
            self.get(x as u32, y as u32)
        }
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = self.index(x, y);
        self.data[i] = value;
    }

    #[inline]
    fn index(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y as usize * self.width as usize + x as usize
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    /// Number of set pixels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// True when no pixel is set.
    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Set pixels in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| ((i % w) as u32, (i / w) as u32))
    }

    /// Pixel-wise OR. Both masks must share dimensions.
    pub fn union(&self, other: &BinaryMask) -> BinaryMask {
        assert_eq!(
            (self.width, self.height),
            (other.width, other.height),
            "mask dimensions differ"
        );
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| *a || *b)
                .collect(),
        }
    }

    /// Pixel-wise AND-NOT: pixels set here and unset in `other`.
    pub fn difference(&self, other: &BinaryMask) -> BinaryMask {
        assert_eq!(
            (self.width, self.height),
            (other.width, other.height),
            "mask dimensions differ"
        );
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| *a && !*b)
                .collect(),
        }
    }
}

/// Area and centroid of a mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskStats {
    pub area: usize,
    /// Mean set-pixel coordinate; `None` for an empty mask.
    pub centroid: Option<(f64, f64)>,
}

pub fn centroid_area(mask: &BinaryMask) -> MaskStats {
    let mut area = 0usize;
    let (mut sx, mut sy) = (0f64, 0f64);
    for (x, y) in mask.iter_set() {
        area += 1;
        sx += x as f64;
        sy += y as f64;
    }
    let centroid = (area > 0).then(|| (sx / area as f64, sy / area as f64));
    MaskStats { area, centroid }
}

/// Set pixels that touch the image border or have an unset 4-neighbor,
/// in row-major order.
pub fn boundary_pixels(mask: &BinaryMask) -> Result<Vec<(u32, u32)>, GeometryError> {
    let out: Vec<_> = mask
        .iter_set()
        .filter(|&(x, y)| {
            let (x, y) = (x as i64, y as i64);
            !(mask.get_signed(x - 1, y)
                && mask.get_signed(x + 1, y)
                && mask.get_signed(x, y - 1)
                && mask.get_signed(x, y + 1))
        })
        .collect();
    if out.is_empty() {
        return Err(GeometryError::EmptyMask);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusSample {
    pub angle_deg: f64,
    pub radius: f64,
}

/// Boundary radii about the mask centroid, grouped into equal angular sectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusProfile {
    pub centroid: (f64, f64),
    pub samples: Vec<RadiusSample>,
    /// Mean radius per sector; `None` where no boundary sample fell in the sector.
    pub sector_means: Vec<Option<f64>>,
}

impl RadiusProfile {
    pub fn sector_count(&self) -> usize {
        self.sector_means.len()
    }

    pub fn present_sectors(&self) -> usize {
        self.sector_means.iter().filter(|m| m.is_some()).count()
    }

    /// Largest present sector mean and its index (earliest index on ties).
    pub fn max_sector(&self) -> Option<(usize, f64)> {
        self.sector_means
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.map(|m| (i, m)))
            .fold(None, |best, (i, m)| match best {
                Some((_, bm)) if bm >= m => best,
                _ => Some((i, m)),
            })
    }

    /// Mean over every raw boundary sample.
    pub fn mean_radius(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s.radius).sum::<f64>() / self.samples.len() as f64
    }
}

/// Index of the sector containing `angle_deg` when `[0, 360)` is cut into `sectors` pieces.
pub fn sector_of(angle_deg: f64, sectors: usize) -> usize {
    let width = 360.0 / sectors as f64;
    ((angle_deg / width) as usize).min(sectors - 1)
}

pub fn radius_profile(mask: &BinaryMask, sectors: usize) -> Result<RadiusProfile, GeometryError> {
    if sectors < 2 {
        return Err(GeometryError::TooFewSectors(sectors));
    }
    let centroid = centroid_area(mask)
        .centroid
        .ok_or(GeometryError::EmptyMask)?;
    let boundary = boundary_pixels(mask)?;

    let mut sums = vec![0f64; sectors];
    let mut counts = vec![0usize; sectors];
    let samples: Vec<RadiusSample> = boundary
        .iter()
        .map(|&(x, y)| {
            let dx = x as f64 - centroid.0;
            let dy = y as f64 - centroid.1;
            let angle_deg = dy.atan2(dx).to_degrees().rem_euclid(360.0);
            // rem_euclid can round up to exactly 360 for tiny negative angles
            let angle_deg = if angle_deg >= 360.0 { 0.0 } else { angle_deg };
            let radius = dx.hypot(dy);
            let s = sector_of(angle_deg, sectors);
            sums[s] += radius;
            counts[s] += 1;
            RadiusSample { angle_deg, radius }
        })
        .collect();

    let sector_means = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
        .collect();

    Ok(RadiusProfile {
        centroid,
        samples,
        sector_means,
    })
}

/// Tight axis-aligned box over pixel coordinates, bounds inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_x: u32,
    pub min_y: u32,
    pub max_x: u32,
    pub max_y: u32,
}

impl BoundingBox {
    pub fn diagonal(&self) -> f64 {
        let dx = (self.max_x - self.min_x) as f64;
        let dy = (self.max_y - self.min_y) as f64;
        dx.hypot(dy)
    }

    pub fn extent(&self) -> (u32, u32) {
        (self.max_x - self.min_x, self.max_y - self.min_y)
    }
}

pub fn bounding_box(points: &[(u32, u32)]) -> Result<BoundingBox, GeometryError> {
    let (&(x0, y0), rest) = points.split_first().ok_or(GeometryError::EmptyInput)?;
    Ok(rest.iter().fold(
        BoundingBox {
            min_x: x0,
            min_y: y0,
            max_x: x0,
            max_y: y0,
        },
        |b, &(x, y)| BoundingBox {
            min_x: b.min_x.min(x),
            min_y: b.min_y.min(y),
            max_x: b.max_x.max(x),
            max_y: b.max_y.max(y),
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(i64, i64)] {
        match self {
            Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
            Connectivity::Eight => &[
                (1, 0),
                (-1, 0),
                (0, 1),
                (0, -1),
                (1, 1),
                (1, -1),
                (-1, 1),
                (-1, -1),
            ],
        }
    }
}

/// Labels connected regions of set pixels.
///
/// Components are returned in the row-major order of their first pixel; the
/// pixels of each component are in BFS order from that seed.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Vec<Vec<(u32, u32)>> {
    let w = mask.width() as usize;
    let mut seen = vec![false; mask.len()];
    let mut components = Vec::new();
    let mut queue = VecDeque::new();

    for (sx, sy) in mask.iter_set() {
        let si = sy as usize * w + sx as usize;
        if seen[si] {
            continue;
        }
        seen[si] = true;
        queue.push_back((sx, sy));
        let mut component = Vec::new();
        while let Some((x, y)) = queue.pop_front() {
            component.push((x, y));
            for &(dx, dy) in connectivity.offsets() {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if mask.get_signed(nx, ny) {
                    let ni = ny as usize * w + nx as usize;
                    if !seen[ni] {
                        seen[ni] = true;
                        queue.push_back((nx as u32, ny as u32));
                    }
                }
            }
        }
        components.push(component);
    }
    components
}

/// Exact squared Euclidean distance from every pixel to the nearest set pixel
/// of `mask` (zero on set pixels, `f64::INFINITY` everywhere if the mask is
/// empty). Row-major, same layout as the mask.
///
/// Two-pass lower-envelope-of-parabolas transform (Felzenszwalb & Huttenlocher).
pub fn squared_distance_transform(mask: &BinaryMask) -> Vec<f64> {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let mut grid: Vec<f64> = mask
        .as_slice()
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();

    let n = w.max(h);
    let mut f = vec![0f64; n];
    let mut d = vec![0f64; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0f64; n + 1];

    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        transform_1d(&f[..h], &mut d[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = d[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        transform_1d(&f[..w], &mut d[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&d[..w]);
    }
    grid
}

fn transform_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    // Skip leading infinite samples: they contribute no parabola.
    let Some(first) = f.iter().position(|x| x.is_finite()) else {
        d.iter_mut().for_each(|x| *x = f64::INFINITY);
        return;
    };
    let mut k = 0usize;
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        let intersect = |p: usize| {
            let (pf, qf) = (p as f64, q as f64);
            ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf)
        };
        let mut s = intersect(v[k]);
        while s <= z[k] {
            k -= 1;
            s = intersect(v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0usize;
    for (q, dq) in d.iter_mut().enumerate().take(n) {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let p = v[k];
        let diff = qf - p as f64;
        *dq = diff * diff + f[p];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(w: u32, h: u32, x0: u32, x1: u32, y0: u32, y1: u32) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| (x0..=x1).contains(&x) && (y0..=y1).contains(&y))
    }

    fn disk(w: u32, h: u32, cx: f64, cy: f64, r: f64) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| {
            (x as f64 - cx).hypot(y as f64 - cy) <= r
        })
    }

    #[test]
    fn full_mask_centroid() {
        let m = BinaryMask::from_fn(10, 10, |_, _| true);
        let s = centroid_area(&m);
        assert_eq!(s.area, 100);
        assert_eq!(s.centroid, Some((4.5, 4.5)));
    }

    #[test]
    fn empty_mask_has_no_centroid() {
        let s = centroid_area(&BinaryMask::new(10, 10));
        assert_eq!(s.area, 0);
        assert_eq!(s.centroid, None);
    }

    #[test]
    fn rectangle_centroid() {
        let s = centroid_area(&rect(10, 10, 2, 5, 3, 4));
        assert_eq!(s.area, 8);
        assert_eq!(s.centroid, Some((3.5, 3.5)));
    }

    #[test]
    fn single_pixel_boundary() {
        let mut m = BinaryMask::new(5, 5);
        m.set(2, 3, true);
        assert_eq!(boundary_pixels(&m).unwrap(), vec![(2, 3)]);
    }

    #[test]
    fn block_boundary_excludes_center() {
        let m = rect(7, 7, 2, 4, 2, 4);
        let b = boundary_pixels(&m).unwrap();
        assert_eq!(b.len(), 8);
        assert!(!b.contains(&(3, 3)));
    }

    #[test]
    fn border_pixels_count_as_boundary() {
        let m = BinaryMask::from_fn(3, 3, |_, _| true);
        assert_eq!(boundary_pixels(&m).unwrap().len(), 8);
    }

    #[test]
    fn boundary_of_empty_mask_fails() {
        assert_eq!(
            boundary_pixels(&BinaryMask::new(4, 4)),
            Err(GeometryError::EmptyMask)
        );
    }

    #[test]
    fn disk_sector_means_are_flat() {
        let m = disk(200, 200, 100.0, 100.0, 50.0);
        let p = radius_profile(&m, 12).unwrap();
        assert_eq!(p.sector_count(), 12);
        for mean in &p.sector_means {
            let mean = mean.unwrap();
            assert!((48.0..=52.0).contains(&mean), "{mean}");
        }
    }

    #[test]
    fn wedge_sector_dominates() {
        // sector 2 covers [60, 90) degrees
        let m = BinaryMask::from_fn(240, 240, |x, y| {
            let (dx, dy) = (x as f64 - 120.0, y as f64 - 120.0);
            let r = dx.hypot(dy);
            let a = dy.atan2(dx).to_degrees().rem_euclid(360.0);
            r <= 50.0 || ((60.0..90.0).contains(&a) && r <= 65.0)
        });
        let p = radius_profile(&m, 12).unwrap();
        let (idx, max) = p.max_sector().unwrap();
        assert_eq!(idx, 2);
        for (i, mean) in p.sector_means.iter().enumerate() {
            if i != idx {
                assert!(mean.unwrap() < max);
            }
        }
    }

    #[test]
    fn one_sector_is_rejected() {
        let m = disk(50, 50, 25.0, 25.0, 10.0);
        assert_eq!(radius_profile(&m, 1), Err(GeometryError::TooFewSectors(1)));
        assert_eq!(
            radius_profile(&BinaryMask::new(5, 5), 12),
            Err(GeometryError::EmptyMask)
        );
    }

    #[test]
    fn bounding_box_examples() {
        let b = bounding_box(&[(0, 0)]).unwrap();
        assert_eq!(b, BoundingBox { min_x: 0, min_y: 0, max_x: 0, max_y: 0 });
        assert_eq!(b.diagonal(), 0.0);
        assert_eq!(bounding_box(&[(0, 0), (3, 4)]).unwrap().diagonal(), 5.0);
        let b = bounding_box(&[(1, 1), (4, 1), (2, 7)]).unwrap();
        assert_eq!(b, BoundingBox { min_x: 1, min_y: 1, max_x: 4, max_y: 7 });
        assert_eq!(b.diagonal(), 45f64.sqrt());
        assert_eq!(bounding_box(&[]), Err(GeometryError::EmptyInput));
    }

    #[test]
    fn components_by_connectivity() {
        let mut m = BinaryMask::new(6, 6);
        m.set(1, 1, true);
        m.set(2, 2, true);
        m.set(5, 5, true);
        assert_eq!(connected_components(&m, Connectivity::Eight).len(), 2);
        assert_eq!(connected_components(&m, Connectivity::Four).len(), 3);
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        let mut m = BinaryMask::new(23, 17);
        for &(x, y) in &[(0, 0), (10, 5), (22, 16), (4, 12)] {
            m.set(x, y, true);
        }
        let dt = squared_distance_transform(&m);
        let set: Vec<_> = m.iter_set().collect();
        for y in 0..17u32 {
            for x in 0..23u32 {
                let brute = set
                    .iter()
                    .map(|&(sx, sy)| {
                        let dx = x as f64 - sx as f64;
                        let dy = y as f64 - sy as f64;
                        dx * dx + dy * dy
                    })
                    .fold(f64::INFINITY, f64::min);
                assert_eq!(dt[(y * 23 + x) as usize], brute, "at ({x},{y})");
            }
        }
    }

    #[test]
    fn distance_transform_of_empty_mask_is_infinite() {
        let dt = squared_distance_transform(&BinaryMask::new(4, 3));
        assert!(dt.iter().all(|d| d.is_infinite()));
    }

    #[test]
    fn binarize_is_idempotent() {
        let img = GrayImage::from_fn(8, 8, |x, y| image::Luma([(x * 37 + y * 11) as u8]));
        let once = BinaryMask::from_gray(&img);
        let twice = BinaryMask::from_gray(&once.to_gray());
        assert_eq!(once, twice);
    }
}
