//! Planar geometry for text instances: points, axis-aligned rectangles,
//! simple polygons and binary masks, plus the overlap measures used by the
//! pseudo-labelling strategies and the evaluator.
//!
//! Pixel conventions: pixel `(x, y)` covers `[x, x+1) × [y, y+1)` and its
//! center is `(x + 0.5, y + 0.5)`. Rectangles are half-open, so the integer
//! rectangle `(0, 0, 10, 10)` covers exactly the pixels `0..10 × 0..10`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Axis-aligned rectangle, half-open on the max side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisRect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl AxisRect {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let r = AxisRect {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "non-finite rectangle {r:?}"
            )));
        }
        if x_min > x_max || y_min > y_max {
            return Err(Error::InvalidGeometry(format!("inverted rectangle {r:?}")));
        }
        Ok(r)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_degenerate(&self) -> bool {
        self.area() <= 0.0
    }

    pub fn translate(&self, dx: f64, dy: f64) -> AxisRect {
        AxisRect {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    /// Smallest rectangle containing both.
    pub fn union(&self, o: &AxisRect) -> AxisRect {
        AxisRect {
            x_min: self.x_min.min(o.x_min),
            y_min: self.y_min.min(o.y_min),
            x_max: self.x_max.max(o.x_max),
            y_max: self.y_max.max(o.y_max),
        }
    }

    /// Integer pixel window `(x0, y0, x1, y1)` covered by the rectangle,
    /// clamped to a `width × height` frame. Empty when `x0 >= x1` or `y0 >= y1`.
    pub fn pixel_window(&self, width: u32, height: u32) -> (u32, u32, u32, u32) {
        let clamp = |v: f64, hi: u32| v.max(0.0).min(hi as f64) as u32;
        (
            clamp(self.x_min.floor(), width),
            clamp(self.y_min.floor(), height),
            clamp(self.x_max.ceil(), width),
            clamp(self.y_max.ceil(), height),
        )
    }

    pub(crate) fn degenerate_error(&self) -> Error {
        Error::DegenerateBox {
            x_min: self.x_min,
            y_min: self.y_min,
            x_max: self.x_max,
            y_max: self.y_max,
        }
    }
}

/// Closed polygon with at least three vertices. The closing edge from the
/// last vertex back to the first is implicit.
///
/// Construction rejects non-finite coordinates and proper crossings between
/// non-adjacent edges. Edges that merely touch or run along each other are
/// accepted, which is what the contour tracer in [`mask_to_polygon`] emits
/// for components with holes.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidGeometry(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if let Some(p) = vertices.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidGeometry(format!("non-finite vertex {p:?}")));
        }
        if let Some((i, j)) = find_crossing(&vertices) {
            return Err(Error::InvalidGeometry(format!(
                "polygon edges {i} and {j} cross"
            )));
        }
        Ok(Polygon { vertices })
    }

    /// Builds a polygon from a flat `[x0, y0, x1, y1, ...]` coordinate list.
    pub fn from_flat(coords: &[f64]) -> Result<Self> {
        if !coords.len().is_multiple_of(2) {
            return Err(Error::InvalidGeometry(format!(
                "odd coordinate count {}",
                coords.len()
            )));
        }
        Polygon::new(
            coords
                .chunks_exact(2)
                .map(|c| Point::new(c[0], c[1]))
                .collect(),
        )
    }

    pub fn from_rect(r: &AxisRect) -> Result<Self> {
        Polygon::new(vec![
            Point::new(r.x_min, r.y_min),
            Point::new(r.x_max, r.y_min),
            Point::new(r.x_max, r.y_max),
            Point::new(r.x_min, r.y_max),
        ])
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn perimeter(&self) -> f64 {
        self.edges()
            .map(|(a, b)| (b.x - a.x).hypot(b.y - a.y))
            .sum()
    }

    /// Tight axis-aligned bounding rectangle of the vertices.
    pub fn bounding_rect(&self) -> AxisRect {
        let mut r = AxisRect {
            x_min: f64::INFINITY,
            y_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        for p in &self.vertices {
            r.x_min = r.x_min.min(p.x);
            r.y_min = r.y_min.min(p.y);
            r.x_max = r.x_max.max(p.x);
            r.y_max = r.y_max.max(p.y);
        }
        r
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Polygon {
        Polygon {
            vertices: self
                .vertices
                .iter()
                .map(|p| Point::new(p.x + dx, p.y + dy))
                .collect(),
        }
    }
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

fn find_crossing(v: &[Point]) -> Option<(usize, usize)> {
    let n = v.len();
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (c, d) = (v[j], v[(j + 1) % n]);
            if segments_cross(a, b, c, d) {
                return Some((i, j));
            }
        }
    }
    None
}

/// Coordinate frame of a mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Frame {
    /// Pixel `(x, y)` is image pixel `(x, y)`.
    Image,
    /// Box-local window resampled from the given image rectangle.
    Box(AxisRect),
}

/// Row-major binary raster.
#[derive(Debug, Clone, PartialEq)]
pub struct BitMask {
    width: u32,
    height: u32,
    frame: Frame,
    bits: Vec<bool>,
}

impl BitMask {
    pub fn new(width: u32, height: u32, frame: Frame) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidGeometry(format!(
                "mask dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(BitMask {
            width,
            height,
            frame,
            bits: vec![false; width as usize * height as usize],
        })
    }

    pub fn image(width: u32, height: u32) -> Result<Self> {
        BitMask::new(width, height, Frame::Image)
    }

    pub fn from_bits(width: u32, height: u32, frame: Frame, bits: Vec<bool>) -> Result<Self> {
        let mut m = BitMask::new(width, height, frame)?;
        if bits.len() != m.bits.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} bits for a {width}x{height} mask",
                bits.len()
            )));
        }
        m.bits = bits;
        Ok(m)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height && self.bits[self.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = self.index(x, y);
        self.bits[i] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    /// Set pixels in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| ((i % w) as u32, (i / w) as u32))
    }

    pub fn union_with(&mut self, other: &BitMask) -> Result<()> {
        check_same_shape(self, other)?;
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
        Ok(())
    }

    /// True when every set pixel lies inside the rectangle's pixel window.
    pub fn is_within(&self, r: &AxisRect) -> bool {
        let (x0, y0, x1, y1) = r.pixel_window(self.width, self.height);
        self.iter_set()
            .all(|(x, y)| x >= x0 && x < x1 && y >= y0 && y < y1)
    }
}

/// A detector output: box, image-frame mask and confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    bbox: AxisRect,
    mask: BitMask,
    score: f64,
}

impl Detection {
    pub fn new(bbox: AxisRect, mask: BitMask, score: f64) -> Result<Self> {
        if mask.frame() != Frame::Image {
            return Err(Error::InvalidGeometry(
                "detection masks use the image frame".into(),
            ));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidGeometry(format!(
                "score {score} outside [0, 1]"
            )));
        }
        if !mask.is_within(&bbox) {
            return Err(Error::InvalidGeometry(format!(
                "mask pixels fall outside box {bbox:?}"
            )));
        }
        Ok(Detection { bbox, mask, score })
    }

    pub fn bbox(&self) -> &AxisRect {
        &self.bbox
    }

    pub fn mask(&self) -> &BitMask {
        &self.mask
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn into_parts(self) -> (AxisRect, BitMask, f64) {
        (self.bbox, self.mask, self.score)
    }
}

fn check_same_shape(a: &BitMask, b: &BitMask) -> Result<()> {
    if a.width != b.width || a.height != b.height || a.frame != b.frame {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} {:?} vs {}x{} {:?}",
            a.width, a.height, a.frame, b.width, b.height, b.frame
        )));
    }
    Ok(())
}

/// Absolute shoelace area.
pub fn polygon_area(p: &Polygon) -> f64 {
    let twice: f64 = p.edges().map(|(a, b)| a.x * b.y - b.x * a.y).sum();
    twice.abs() / 2.0
}

pub fn rect_iou(a: &AxisRect, b: &AxisRect) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Scanline rasterization with the even-odd rule on pixel centers.
pub fn rasterize(p: &Polygon, width: u32, height: u32) -> Result<BitMask> {
    let mut mask = BitMask::image(width, height)?;
    fill_polygon(&mut mask, p);
    Ok(mask)
}

/// Union of the rasterizations of several polygons.
pub fn rasterize_all(polys: &[Polygon], width: u32, height: u32) -> Result<BitMask> {
    let mut mask = BitMask::image(width, height)?;
    for p in polys {
        fill_polygon(&mut mask, p);
    }
    Ok(mask)
}

fn fill_polygon(mask: &mut BitMask, p: &Polygon) {
    let bounds = p.bounding_rect();
    let (_, y0, _, y1) = bounds.pixel_window(mask.width, mask.height);
    let mut crossings: Vec<f64> = Vec::new();
    for row in y0..y1 {
        let yc = row as f64 + 0.5;
        crossings.clear();
        for (a, b) in p.edges() {
            if (a.y > yc) != (b.y > yc) {
                crossings.push((b.x - a.x) * (yc - a.y) / (b.y - a.y) + a.x);
            }
        }
        crossings.sort_by(f64::total_cmp);
        // A center xc is inside iff an odd number of crossings lie strictly
        // right of it, i.e. lo <= xc < hi for some pair.
        for pair in crossings.chunks_exact(2) {
            let first = (pair[0] - 0.5).ceil().max(0.0);
            let last = (pair[1] - 0.5).ceil().min(mask.width as f64);
            if first >= last {
                continue;
            }
            for col in first as u32..last as u32 {
                let i = mask.index(col, row);
                mask.bits[i] = true;
            }
        }
    }
}

/// `|a ∧ b| / |a ∨ b|`, defined as 0 when both masks are empty.
pub fn mask_iou(a: &BitMask, b: &BitMask) -> Result<f64> {
    check_same_shape(a, b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.bits.iter().zip(&b.bits) {
        inter += (*x && *y) as usize;
        union += (*x || *y) as usize;
    }
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Tightest half-open rectangle covering all set pixels.
pub fn mask_bbox(m: &BitMask) -> Result<AxisRect> {
    let mut it = m.iter_set();
    let (fx, fy) = it.next().ok_or(Error::EmptyMask)?;
    let (mut x0, mut y0, mut x1, mut y1) = (fx, fy, fx, fy);
    for (x, y) in it {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    Ok(AxisRect {
        x_min: x0 as f64,
        y_min: y0 as f64,
        x_max: (x1 + 1) as f64,
        y_max: (y1 + 1) as f64,
    })
}

/// Nearest-neighbour resample of the part of `m` under `bx` into an
/// `out_w × out_h` box-local window. Source pixels outside the image read 0.
pub fn crop_mask(m: &BitMask, bx: &AxisRect, out_w: u32, out_h: u32) -> Result<BitMask> {
    if bx.is_degenerate() {
        return Err(bx.degenerate_error());
    }
    let mut out = BitMask::new(out_w, out_h, Frame::Box(*bx))?;
    let sx = bx.width() / out_w as f64;
    let sy = bx.height() / out_h as f64;
    for v in 0..out_h {
        let y = (bx.y_min + (v as f64 + 0.5) * sy).floor();
        if y < 0.0 || y >= m.height as f64 {
            continue;
        }
        for u in 0..out_w {
            let x = (bx.x_min + (u as f64 + 0.5) * sx).floor();
            if x < 0.0 || x >= m.width as f64 {
                continue;
            }
            if m.get(x as u32, y as u32) {
                out.set(u, v, true);
            }
        }
    }
    Ok(out)
}

/// 4-connected components as pixel lists, ordered by their first pixel in
/// row-major order; pixels within a component are in row-major order too.
pub fn connected_components(m: &BitMask) -> Vec<Vec<(u32, u32)>> {
    let labels = label_components(m);
    let mut comps: Vec<Vec<(u32, u32)>> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let l = l as usize - 1;
        if comps.len() <= l {
            comps.resize_with(l + 1, Vec::new);
        }
        comps[l].push(((i % m.width as usize) as u32, (i / m.width as usize) as u32));
    }
    comps
}

/// Label grid: 0 for background, `k + 1` for pixels of component `k`.
fn label_components(m: &BitMask) -> Vec<u32> {
    let (w, h) = (m.width as usize, m.height as usize);
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !m.bits[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if m.bits[j] && labels[j] == 0 {
                    labels[j] = next;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
    }
    labels
}

/// One polygon per 4-connected component, traced along pixel edges.
///
/// Holes are spliced into the outer contour with zero-width vertical
/// bridges that run through the component's interior, so the even-odd
/// rasterization of each polygon reproduces its component exactly.
pub fn mask_to_polygon(m: &BitMask) -> Vec<Polygon> {
    let labels = label_components(m);
    let n_comps = labels.iter().copied().max().unwrap_or(0);
    (1..=n_comps)
        .map(|label| trace_component(&labels, m.width as i64, m.height as i64, label))
        .collect()
}

type Vertex = (i64, i64);

struct Edge {
    from: Vertex,
    to: Vertex,
    owner: usize,
}

fn trace_component(labels: &[u32], w: i64, h: i64, label: u32) -> Polygon {
    let inside = |x: i64, y: i64| {
        x >= 0 && y >= 0 && x < w && y < h && labels[(y * w + x) as usize] == label
    };

    // Directed boundary edges, clockwise around each pixel on screen.
    let mut edges: Vec<Edge> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !inside(x, y) {
                continue;
            }
            let owner = (y * w + x) as usize;
            if !inside(x, y - 1) {
                edges.push(Edge {
                    from: (x, y),
                    to: (x + 1, y),
                    owner,
                });
            }
            if !inside(x + 1, y) {
                edges.push(Edge {
                    from: (x + 1, y),
                    to: (x + 1, y + 1),
                    owner,
                });
            }
            if !inside(x, y + 1) {
                edges.push(Edge {
                    from: (x + 1, y + 1),
                    to: (x, y + 1),
                    owner,
                });
            }
            if !inside(x - 1, y) {
                edges.push(Edge {
                    from: (x, y + 1),
                    to: (x, y),
                    owner,
                });
            }
        }
    }
    let mut outgoing: HashMap<Vertex, Vec<usize>> = HashMap::new();
    for (i, e) in edges.iter().enumerate() {
        outgoing.entry(e.from).or_default().push(i);
    }

    // Follow edges into cycles. At a diagonal pinch two edges leave the same
    // vertex; staying with the current pixel keeps diagonal neighbours apart.
    let mut used = vec![false; edges.len()];
    let mut cycles: Vec<Vec<Vertex>> = Vec::new();
    for start in 0..edges.len() {
        if used[start] {
            continue;
        }
        let mut cycle = Vec::new();
        let mut cur = start;
        loop {
            used[cur] = true;
            cycle.push(edges[cur].from);
            let cands = &outgoing[&edges[cur].to];
            let next = if cands.len() == 1 {
                cands[0]
            } else {
                cands
                    .iter()
                    .copied()
                    .find(|&c| edges[c].owner == edges[cur].owner)
                    .unwrap_or(cands[0])
            };
            if used[next] {
                break;
            }
            cur = next;
        }
        cycles.push(cycle);
    }

    let mut at_vertex: HashMap<Vertex, Vec<(usize, usize)>> = HashMap::new();
    for (ci, c) in cycles.iter().enumerate() {
        for (vi, v) in c.iter().enumerate() {
            at_vertex.entry(*v).or_default().push((ci, vi));
        }
    }

    // children[c] = (index in cycle c, child cycle, child start index)
    let mut children: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); cycles.len()];
    for (ci, c) in cycles.iter().enumerate().skip(1) {
        let (top_idx, &(tx, ty)) = c
            .iter()
            .enumerate()
            .min_by_key(|(_, (x, y))| (*y, *x))
            .expect("cycles are non-empty");
        let mut y = ty;
        let parent = loop {
            let hit = at_vertex
                .get(&(tx, y))
                .and_then(|hits| hits.iter().find(|(other, _)| *other != ci));
            if let Some(&(pc, pv)) = hit {
                break (pc, pv);
            }
            debug_assert!(inside(tx - 1, y - 1) && inside(tx, y - 1));
            y -= 1;
        };
        children[parent.0].push((parent.1, ci, top_idx));
    }

    let mut seq: Vec<Vertex> = Vec::new();
    emit_cycle(&cycles, &children, 0, 0, &mut seq);
    let simplified = simplify_rectilinear(seq);
    Polygon {
        vertices: simplified
            .into_iter()
            .map(|(x, y)| Point::new(x as f64, y as f64))
            .collect(),
    }
}

fn emit_cycle(
    cycles: &[Vec<Vertex>],
    children: &[Vec<(usize, usize, usize)>],
    ci: usize,
    start: usize,
    out: &mut Vec<Vertex>,
) {
    let c = &cycles[ci];
    for k in 0..c.len() {
        let idx = (start + k) % c.len();
        out.push(c[idx]);
        for &(at, child, child_start) in &children[ci] {
            if at == idx {
                emit_cycle(cycles, children, child, child_start, out);
                out.push(cycles[child][child_start]);
                out.push(c[idx]);
            }
        }
    }
}

/// Drops repeated vertices and vertices in the middle of straight runs.
/// Reversals (the two sides of a bridge) are kept.
fn simplify_rectilinear(mut v: Vec<Vertex>) -> Vec<Vertex> {
    loop {
        let n = v.len();
        if n < 3 {
            return v;
        }
        let mut keep = Vec::with_capacity(n);
        let mut changed = false;
        for i in 0..n {
            let prev = v[(i + n - 1) % n];
            let cur = v[i];
            let next = v[(i + 1) % n];
            if cur == prev {
                changed = true;
                continue;
            }
            let d1 = ((cur.0 - prev.0).signum(), (cur.1 - prev.1).signum());
            let d2 = ((next.0 - cur.0).signum(), (next.1 - cur.1).signum());
            if d1 == d2 {
                changed = true;
                continue;
            }
            keep.push(cur);
        }
        if !changed {
            return keep;
        }
        v = keep;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(coords: &[(f64, f64)]) -> Polygon {
        Polygon::new(coords.iter().map(|&(x, y)| Point::new(x, y)).collect()).unwrap()
    }

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> AxisRect {
        AxisRect::new(x0, y0, x1, y1).unwrap()
    }

    fn mask_from_rows(rows: &[&str]) -> BitMask {
        let h = rows.len() as u32;
        let w = rows[0].len() as u32;
        let bits = rows
            .iter()
            .flat_map(|r| r.chars().map(|c| c == '#'))
            .collect();
        BitMask::from_bits(w, h, Frame::Image, bits).unwrap()
    }

    #[test]
    fn area_examples() {
        assert_eq!(
            polygon_area(&poly(&[(0., 0.), (1., 0.), (1., 1.), (0., 1.)])),
            1.0
        );
        assert_eq!(polygon_area(&poly(&[(0., 0.), (4., 0.), (0., 3.)])), 6.0);
        assert_eq!(polygon_area(&poly(&[(0., 0.), (1., 1.), (2., 2.)])), 0.0);
        // clockwise and counter-clockwise agree
        assert_eq!(polygon_area(&poly(&[(0., 0.), (0., 3.), (4., 0.)])), 6.0);
    }

    #[test]
    fn polygon_validation() {
        assert!(Polygon::new(vec![Point::new(0., 0.), Point::new(1., 1.)]).is_err());
        assert!(Polygon::new(vec![
            Point::new(0., 0.),
            Point::new(f64::NAN, 0.),
            Point::new(1., 1.)
        ])
        .is_err());
        // bow-tie
        assert!(Polygon::from_flat(&[0., 0., 2., 2., 2., 0., 0., 2.]).is_err());
        assert!(Polygon::from_flat(&[0., 0., 2., 0., 2.]).is_err());
    }

    #[test]
    fn rect_iou_examples() {
        let a = rect(0., 0., 2., 2.);
        assert_eq!(rect_iou(&a, &a), 1.0);
        assert_eq!(rect_iou(&a, &rect(5., 5., 6., 6.)), 0.0);
        assert!((rect_iou(&a, &rect(1., 1., 3., 3.)) - 1.0 / 7.0).abs() < 1e-12);
        let z = rect(1., 1., 1., 1.);
        assert_eq!(rect_iou(&z, &z), 0.0);
    }

    #[test]
    fn rect_validation() {
        assert!(AxisRect::new(2., 0., 1., 1.).is_err());
        assert!(AxisRect::new(0., 0., f64::INFINITY, 1.).is_err());
    }

    #[test]
    fn rasterize_examples() {
        let sq = poly(&[(0., 0.), (10., 0.), (10., 10.), (0., 10.)]);
        assert_eq!(rasterize(&sq, 10, 10).unwrap().count(), 100);
        let outside = poly(&[(20., 20.), (30., 20.), (30., 30.)]);
        assert!(rasterize(&outside, 10, 10).unwrap().is_empty());
        let tri = poly(&[(0., 0.), (4., 0.), (0., 3.)]);
        let n = rasterize(&tri, 20, 20).unwrap().count() as f64;
        assert!((n - 6.0).abs() <= tri.perimeter());
        assert!(rasterize(&tri, 0, 5).is_err());
    }

    #[test]
    fn mask_iou_examples() {
        let full = mask_from_rows(&["##", "##"]);
        assert_eq!(mask_iou(&full, &full).unwrap(), 1.0);
        let a = mask_from_rows(&["#.", ".."]);
        let b = mask_from_rows(&["..", ".#"]);
        assert_eq!(mask_iou(&a, &b).unwrap(), 0.0);

        let mut left = BitMask::image(10, 10).unwrap();
        let mut all = BitMask::image(10, 10).unwrap();
        for y in 0..10 {
            for x in 0..10 {
                left.set(x, y, x < 5);
                all.set(x, y, true);
            }
        }
        assert_eq!(mask_iou(&left, &all).unwrap(), 0.5);

        let empty = BitMask::image(3, 3).unwrap();
        assert_eq!(mask_iou(&empty, &empty).unwrap(), 0.0);
        let other = BitMask::image(3, 4).unwrap();
        assert!(matches!(
            mask_iou(&empty, &other),
            Err(Error::DimensionMismatch(_))
        ));
        let boxed = BitMask::new(3, 3, Frame::Box(rect(0., 0., 3., 3.))).unwrap();
        assert!(mask_iou(&empty, &boxed).is_err());
    }

    #[test]
    fn bbox_examples() {
        let mut m = BitMask::image(10, 10).unwrap();
        m.set(3, 4, true);
        assert_eq!(mask_bbox(&m).unwrap(), rect(3., 4., 4., 5.));
        let mut m = BitMask::image(10, 10).unwrap();
        m.set(1, 1, true);
        m.set(7, 2, true);
        assert_eq!(mask_bbox(&m).unwrap(), rect(1., 1., 8., 3.));
        let full = BitMask::from_bits(10, 10, Frame::Image, vec![true; 100]).unwrap();
        assert_eq!(mask_bbox(&full).unwrap(), rect(0., 0., 10., 10.));
        assert!(matches!(
            mask_bbox(&BitMask::image(4, 4).unwrap()),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn crop_examples() {
        let full = BitMask::from_bits(6, 5, Frame::Image, vec![true; 30]).unwrap();
        let whole = rect(0., 0., 6., 5.);
        let c = crop_mask(&full, &whole, 6, 5).unwrap();
        assert_eq!(c.bits(), full.bits());
        assert_eq!(c.frame(), Frame::Box(whole));

        let empty = BitMask::image(6, 5).unwrap();
        assert!(crop_mask(&empty, &whole, 3, 3).unwrap().is_empty());

        let checker = mask_from_rows(&["#.#.", ".#.#", "#.#.", ".#.#"]);
        let left = crop_mask(&checker, &rect(0., 0., 2., 4.), 2, 4).unwrap();
        let expected = mask_from_rows(&["#.", ".#", "#.", ".#"]);
        assert_eq!(left.bits(), expected.bits());

        assert!(matches!(
            crop_mask(&full, &rect(1., 1., 1., 3.), 2, 2),
            Err(Error::DegenerateBox { .. })
        ));
    }

    #[test]
    fn polygon_tracing_examples() {
        assert!(mask_to_polygon(&BitMask::image(5, 5).unwrap()).is_empty());

        let mut block = BitMask::image(8, 8).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                block.set(x, y, true);
            }
        }
        let polys = mask_to_polygon(&block);
        assert_eq!(polys.len(), 1);
        assert_eq!(polys[0].to_flat(), vec![0., 0., 5., 0., 5., 5., 0., 5.]);

        let two = mask_from_rows(&["##...", "##...", ".....", "...##"]);
        assert_eq!(mask_to_polygon(&two).len(), 2);
    }

    #[test]
    fn tracing_handles_holes_and_pinches() {
        let cases: [&[&str]; 4] = [
            &["#####", "#...#", "#.#.#", "#...#", "#####"],
            &["####", "#..#", "####"],
            &["###.", "#.#.", "####", "..##"],
            &["##..", "#.#.", ".###", "..#."],
        ];
        for rows in cases {
            let m = mask_from_rows(rows);
            let polys = mask_to_polygon(&m);
            assert_eq!(polys.len(), connected_components(&m).len());
            let back = rasterize_all(&polys, m.width(), m.height()).unwrap();
            assert_eq!(back.bits(), m.bits(), "{rows:?}");
            for p in &polys {
                assert!(Polygon::new(p.vertices().to_vec()).is_ok());
            }
        }
    }

    #[test]
    fn detection_invariants() {
        let mut m = BitMask::image(8, 8).unwrap();
        m.set(2, 2, true);
        m.set(3, 2, true);
        assert!(Detection::new(rect(2., 2., 4., 3.), m.clone(), 0.7).is_ok());
        assert!(Detection::new(rect(2., 2., 3., 3.), m.clone(), 0.7).is_err());
        assert!(Detection::new(rect(2., 2., 4., 3.), m.clone(), 1.5).is_err());
        // fractional boxes are widened to whole pixels
        assert!(Detection::new(rect(2.2, 2.5, 3.1, 2.9), m, 0.7).is_ok());
    }

    #[test]
    fn components_are_four_connected() {
        let m = mask_from_rows(&["#.", ".#"]);
        assert_eq!(connected_components(&m).len(), 2);
        let m = mask_from_rows(&["##", ".#"]);
        assert_eq!(connected_components(&m), vec![vec![(0, 0), (1, 0), (1, 1)]]);
    }
}
