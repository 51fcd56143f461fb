//! Structured, axis-aligned quadrilateral meshes.
//!
//! Elements are indexed lexicographically, `e = j * nx + i`, with `i` running
//! along x. Local vertex (and basis) numbering follows the tensor layout
//!
//! ```text
//!   2 ---- 3
//!   |      |
//!   0 ---- 1
//! ```
//!
//! so local node `a + 2 b` sits at `(x_a, y_b)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle `(x0, y0)`–`(x1, y1)` in cm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoundingBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn unit_square() -> Self {
        Self::new(0.0, 0.0, 1.0, 1.0)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    fn contains_box(&self, other: &BoundingBox) -> bool {
        other.x0 >= self.x0 && other.x1 <= self.x1 && other.y0 >= self.y0 && other.y1 <= self.y1
    }
}

/// One material region of a [`RegionMap`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    #[serde(rename = "box")]
    pub bounds: BoundingBox,
    pub material: usize,
}

/// Material lookup by element centroid; the first box that contains the
/// centroid wins, otherwise the default material applies.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RegionMap {
    #[serde(default)]
    pub regions: Vec<Region>,
    #[serde(default)]
    pub default_material: usize,
}

impl RegionMap {
    pub fn uniform(material: usize) -> Self {
        Self { regions: Vec::new(), default_material: material }
    }

    pub fn with_region(mut self, bounds: BoundingBox, material: usize) -> Self {
        self.regions.push(Region { bounds, material });
        self
    }

    pub fn material_at(&self, x: f64, y: f64) -> usize {
        self.regions
            .iter()
            .find(|r| r.bounds.contains(x, y))
            .map_or(self.default_material, |r| r.material)
    }

    /// Largest material id referenced by the map.
    pub fn max_material(&self) -> usize {
        self.regions.iter().map(|r| r.material).fold(self.default_material, usize::max)
    }
}

/// Which edge of the bounding box a boundary face lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Bottom, Side::Top];

    pub fn outward_normal(self) -> [f64; 2] {
        match self {
            Side::Left => [-1.0, 0.0],
            Side::Right => [1.0, 0.0],
            Side::Bottom => [0.0, -1.0],
            Side::Top => [0.0, 1.0],
        }
    }

    /// Local face index of an element edge lying on this side.
    pub fn local_face(self) -> LocalFace {
        match self {
            Side::Left => LocalFace::Left,
            Side::Right => LocalFace::Right,
            Side::Bottom => LocalFace::Bottom,
            Side::Top => LocalFace::Top,
        }
    }
}

/// Boundary classification carried by the mesh; the physics meaning is
/// decided by the problem definition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryTag {
    /// Inflow data (possibly zero, i.e. vacuum) is prescribed.
    #[default]
    Inflow,
    Reflecting,
}

/// Boundary tags for the four sides of the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SideTags {
    #[serde(default)]
    pub left: BoundaryTag,
    #[serde(default)]
    pub right: BoundaryTag,
    #[serde(default)]
    pub bottom: BoundaryTag,
    #[serde(default)]
    pub top: BoundaryTag,
}

impl SideTags {
    pub fn all_inflow() -> Self {
        Self::default()
    }

    pub fn get(&self, side: Side) -> BoundaryTag {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
            Side::Bottom => self.bottom,
            Side::Top => self.top,
        }
    }
}

/// Element-local edge, numbered so that the two local nodes on it are
/// given by [`LocalFace::nodes`] in increasing tangential coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LocalFace {
    Left,
    Right,
    Bottom,
    Top,
}

impl LocalFace {
    pub const ALL: [LocalFace; 4] = [LocalFace::Left, LocalFace::Right, LocalFace::Bottom, LocalFace::Top];

    pub fn nodes(self) -> [usize; 2] {
        match self {
            LocalFace::Left => [0, 2],
            LocalFace::Right => [1, 3],
            LocalFace::Bottom => [0, 1],
            LocalFace::Top => [2, 3],
        }
    }

    pub fn outward_normal(self) -> [f64; 2] {
        match self {
            LocalFace::Left => [-1.0, 0.0],
            LocalFace::Right => [1.0, 0.0],
            LocalFace::Bottom => [0.0, -1.0],
            LocalFace::Top => [0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub i: usize,
    pub j: usize,
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub material: usize,
}

impl Element {
    pub fn hx(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn hy(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.hx() * self.hy()
    }

    pub fn centroid(&self) -> [f64; 2] {
        [0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1)]
    }

    /// Physical coordinates of a point given in reference coordinates on [0,1]².
    pub fn map(&self, xi: f64, eta: f64) -> [f64; 2] {
        [self.x0 + xi * self.hx(), self.y0 + eta * self.hy()]
    }

    /// Element extent normal to a local face.
    pub fn normal_extent(&self, face: LocalFace) -> f64 {
        match face {
            LocalFace::Left | LocalFace::Right => self.hx(),
            LocalFace::Bottom | LocalFace::Top => self.hy(),
        }
    }
}

/// Face shared by two elements; `normal` points from `elem1` to `elem2`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteriorFace {
    pub elem1: usize,
    pub elem2: usize,
    pub face1: LocalFace,
    pub face2: LocalFace,
    pub normal: [f64; 2],
    pub length: f64,
    /// Face endpoints ordered by increasing tangential coordinate.
    pub endpoints: [[f64; 2]; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFace {
    pub elem: usize,
    pub face: LocalFace,
    pub side: Side,
    pub normal: [f64; 2],
    pub length: f64,
    pub endpoints: [[f64; 2]; 2],
    pub tag: BoundaryTag,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub nx: usize,
    pub ny: usize,
    pub bbox: BoundingBox,
    pub regions: RegionMap,
    pub tags: SideTags,
    pub elements: Vec<Element>,
    pub interior_faces: Vec<InteriorFace>,
    pub boundary_faces: Vec<BoundaryFace>,
}

impl Mesh {
    /// Builds a uniform `nx` by `ny` grid on `bbox`.
    pub fn build_cartesian(
        nx: usize,
        ny: usize,
        bbox: BoundingBox,
        regions: RegionMap,
        tags: SideTags,
    ) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Mesh(format!("element counts must be positive, got {nx}x{ny}")));
        }
        if !(bbox.x1 > bbox.x0 && bbox.y1 > bbox.y0) {
            return Err(Error::Mesh(format!("degenerate or inverted bounding box {bbox:?}")));
        }
        if let Some(r) = regions.regions.iter().find(|r| !bbox.contains_box(&r.bounds)) {
            return Err(Error::Mesh(format!("region {:?} extends outside the domain", r.bounds)));
        }

        let hx = bbox.width() / nx as f64;
        let hy = bbox.height() / ny as f64;
        // Snap the last vertex to the box so the grid tiles it exactly.
        let xs: Vec<f64> = (0..=nx)
            .map(|i| if i == nx { bbox.x1 } else { bbox.x0 + i as f64 * hx })
            .collect();
        let ys: Vec<f64> = (0..=ny)
            .map(|j| if j == ny { bbox.y1 } else { bbox.y0 + j as f64 * hy })
            .collect();

        let mut elements = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (x0, x1, y0, y1) = (xs[i], xs[i + 1], ys[j], ys[j + 1]);
                let material = regions.material_at(0.5 * (x0 + x1), 0.5 * (y0 + y1));
                elements.push(Element { i, j, x0, y0, x1, y1, material });
            }
        }

        let idx = |i: usize, j: usize| j * nx + i;
        let mut interior_faces = Vec::with_capacity((nx - 1) * ny + nx * (ny - 1));
        for j in 0..ny {
            for i in 0..nx.saturating_sub(1) {
                interior_faces.push(InteriorFace {
                    elem1: idx(i, j),
                    elem2: idx(i + 1, j),
                    face1: LocalFace::Right,
                    face2: LocalFace::Left,
                    normal: [1.0, 0.0],
                    length: ys[j + 1] - ys[j],
                    endpoints: [[xs[i + 1], ys[j]], [xs[i + 1], ys[j + 1]]],
                });
            }
        }
        for j in 0..ny.saturating_sub(1) {
            for i in 0..nx {
                interior_faces.push(InteriorFace {
                    elem1: idx(i, j),
                    elem2: idx(i, j + 1),
                    face1: LocalFace::Top,
                    face2: LocalFace::Bottom,
                    normal: [0.0, 1.0],
                    length: xs[i + 1] - xs[i],
                    endpoints: [[xs[i], ys[j + 1]], [xs[i + 1], ys[j + 1]]],
                });
            }
        }

        let mut boundary_faces = Vec::with_capacity(2 * (nx + ny));
        for side in Side::ALL {
            let tag = tags.get(side);
            let normal = side.outward_normal();
            let face = side.local_face();
            match side {
                Side::Left | Side::Right => {
                    let (i, x) = if side == Side::Left { (0, xs[0]) } else { (nx - 1, xs[nx]) };
                    for j in 0..ny {
                        boundary_faces.push(BoundaryFace {
                            elem: idx(i, j),
                            face,
                            side,
                            normal,
                            length: ys[j + 1] - ys[j],
                            endpoints: [[x, ys[j]], [x, ys[j + 1]]],
                            tag,
                        });
                    }
                }
                Side::Bottom | Side::Top => {
                    let (j, y) = if side == Side::Bottom { (0, ys[0]) } else { (ny - 1, ys[ny]) };
                    for i in 0..nx {
                        boundary_faces.push(BoundaryFace {
                            elem: idx(i, j),
                            face,
                            side,
                            normal,
                            length: xs[i + 1] - xs[i],
                            endpoints: [[xs[i], y], [xs[i + 1], y]],
                            tag,
                        });
                    }
                }
            }
        }

        Ok(Self { nx, ny, bbox, regions, tags, elements, interior_faces, boundary_faces })
    }

    /// Doubles the element count along each axis, re-evaluating materials.
    pub fn uniform_refine(&self) -> Self {
        Self::build_cartesian(2 * self.nx, 2 * self.ny, self.bbox, self.regions.clone(), self.tags)
            .expect("refining a valid mesh cannot fail")
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn element_index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Characteristic mesh size (largest element edge).
    pub fn h(&self) -> f64 {
        (self.bbox.width() / self.nx as f64).max(self.bbox.height() / self.ny as f64)
    }

    /// Index into `boundary_faces` of the `k`-th face along `side`
    /// (counted in increasing coordinate).
    pub fn boundary_face_index(&self, side: Side, k: usize) -> usize {
        match side {
            Side::Left => k,
            Side::Right => self.ny + k,
            Side::Bottom => 2 * self.ny + k,
            Side::Top => 2 * self.ny + self.nx + k,
        }
    }

    pub fn has_reflecting(&self) -> bool {
        self.boundary_faces.iter().any(|f| f.tag == BoundaryTag::Reflecting)
    }

    /// Element containing `(x, y)`; points on shared edges resolve to the
    /// element with the larger index, points outside are clamped.
    pub fn locate(&self, x: f64, y: f64) -> usize {
        let fx = (x - self.bbox.x0) / self.bbox.width() * self.nx as f64;
        let fy = (y - self.bbox.y0) / self.bbox.height() * self.ny as f64;
        let i = (fx.floor().max(0.0) as usize).min(self.nx - 1);
        let j = (fy.floor().max(0.0) as usize).min(self.ny - 1);
        self.element_index(i, j)
    }

    pub fn total_area(&self) -> f64 {
        self.elements.iter().map(Element::area).sum()
    }
}
