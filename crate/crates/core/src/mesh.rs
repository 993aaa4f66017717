//! Structured coarse/fine quadrilateral meshes on the unit square.
//!
//! Indexing is row-major with `y` outer everywhere:
//! - fine node `(x, y)` is `y * (n_fine + 1) + x`,
//! - fine cell `(cx, cy)` is `cy * n_fine + cx`,
//! - coarse element `(ex, ey)` is `ey * n_coarse + ex`.
//!
//! Boundary edges are enumerated side by side in the order bottom, right,
//! top, left; along each side by increasing coordinate.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Bottom, Side::Right, Side::Top, Side::Left];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryLabel {
    Dirichlet,
    Neumann,
}

/// How the boundary of the unit square is split into Γ_D and Γ_N.
#[derive(Clone, Debug, PartialEq)]
pub enum BoundarySpec {
    AllDirichlet,
    /// Every edge on Γ_N. Used for pure Robin problems.
    AllNeumann,
    /// One label per side, in `Side::ALL` order.
    Sides([BoundaryLabel; 4]),
    /// One label per fine boundary edge, in boundary edge order.
    Edges(Vec<BoundaryLabel>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    Dirichlet,
    /// On ∂Ω but not touching any Γ_D edge.
    Neumann,
}

#[derive(Clone, Debug)]
pub struct BoundaryEdge {
    pub side: Side,
    /// Position along the side, `0..n_fine`.
    pub index: usize,
    pub nodes: [usize; 2],
    pub cell: usize,
    pub element: usize,
    pub midpoint: [f64; 2],
    pub label: BoundaryLabel,
}

#[derive(Clone, Debug)]
pub struct GridGeometry {
    n_coarse: usize,
    refine: usize,
    n_fine: usize,
    edges: Vec<BoundaryEdge>,
    node_kind: Vec<NodeKind>,
}

/// Builds the coarse and fine grids and classifies boundary edges and nodes.
pub fn build_grids(n_coarse: usize, refine: usize, boundary: &BoundarySpec) -> Result<GridGeometry> {
    if n_coarse < 2 {
        return Err(Error::InvalidParameter(format!("n_coarse must be >= 2, got {n_coarse}")));
    }
    if refine < 2 {
        return Err(Error::InvalidParameter(format!("refine must be >= 2, got {refine}")));
    }
    let n_fine = n_coarse * refine;
    let n_edges = 4 * n_fine;
    let labels: Vec<BoundaryLabel> = match boundary {
        BoundarySpec::AllDirichlet => vec![BoundaryLabel::Dirichlet; n_edges],
        BoundarySpec::AllNeumann => vec![BoundaryLabel::Neumann; n_edges],
        BoundarySpec::Sides(s) => s.iter().flat_map(|&l| std::iter::repeat_n(l, n_fine)).collect(),
        BoundarySpec::Edges(e) => {
            if e.len() != n_edges {
                return Err(Error::BoundaryCoverage(format!(
                    "{} labels given for {} boundary edges",
                    e.len(),
                    n_edges
                )));
            }
            e.clone()
        }
    };

    let np = n_fine + 1;
    let h = 1.0 / n_fine as f64;
    let mut edges = Vec::with_capacity(n_edges);
    for side in Side::ALL {
        for k in 0..n_fine {
            let (a, b, cx, cy, mid) = match side {
                Side::Bottom => ((k, 0), (k + 1, 0), k, 0, [(k as f64 + 0.5) * h, 0.0]),
                Side::Right => ((n_fine, k), (n_fine, k + 1), n_fine - 1, k, [1.0, (k as f64 + 0.5) * h]),
                Side::Top => ((k, n_fine), (k + 1, n_fine), k, n_fine - 1, [(k as f64 + 0.5) * h, 1.0]),
                Side::Left => ((0, k), (0, k + 1), 0, k, [0.0, (k as f64 + 0.5) * h]),
            };
            let idx = edges.len();
            edges.push(BoundaryEdge {
                side,
                index: k,
                nodes: [a.1 * np + a.0, b.1 * np + b.0],
                cell: cy * n_fine + cx,
                element: (cy / refine) * n_coarse + cx / refine,
                midpoint: mid,
                label: labels[idx],
            });
        }
    }

    let mut node_kind = vec![NodeKind::Interior; np * np];
    for e in &edges {
        for &n in &e.nodes {
            match e.label {
                BoundaryLabel::Dirichlet => node_kind[n] = NodeKind::Dirichlet,
                BoundaryLabel::Neumann => {
                    if node_kind[n] == NodeKind::Interior {
                        node_kind[n] = NodeKind::Neumann;
                    }
                }
            }
        }
    }

    Ok(GridGeometry {
        n_coarse,
        refine,
        n_fine,
        edges,
        node_kind,
    })
}

impl GridGeometry {
    pub fn n_coarse(&self) -> usize {
        self.n_coarse
    }
    pub fn refine(&self) -> usize {
        self.refine
    }
    /// Fine cells per axis.
    pub fn n_fine(&self) -> usize {
        self.n_fine
    }
    /// Coarse mesh size H.
    pub fn coarse_h(&self) -> f64 {
        1.0 / self.n_coarse as f64
    }
    /// Fine mesh size h.
    pub fn fine_h(&self) -> f64 {
        1.0 / self.n_fine as f64
    }
    pub fn n_elements(&self) -> usize {
        self.n_coarse * self.n_coarse
    }
    pub fn nodes_per_axis(&self) -> usize {
        self.n_fine + 1
    }
    pub fn n_nodes(&self) -> usize {
        self.nodes_per_axis() * self.nodes_per_axis()
    }
    pub fn n_cells(&self) -> usize {
        self.n_fine * self.n_fine
    }

    pub fn node(&self, x: usize, y: usize) -> usize {
        y * self.nodes_per_axis() + x
    }
    pub fn node_xy(&self, n: usize) -> (usize, usize) {
        (n % self.nodes_per_axis(), n / self.nodes_per_axis())
    }
    pub fn node_coords(&self, n: usize) -> [f64; 2] {
        let (x, y) = self.node_xy(n);
        let h = self.fine_h();
        [x as f64 * h, y as f64 * h]
    }
    pub fn node_kind(&self, n: usize) -> NodeKind {
        self.node_kind[n]
    }
    pub fn is_dirichlet(&self, n: usize) -> bool {
        self.node_kind[n] == NodeKind::Dirichlet
    }

    pub fn cell(&self, cx: usize, cy: usize) -> usize {
        cy * self.n_fine + cx
    }
    pub fn cell_xy(&self, c: usize) -> (usize, usize) {
        (c % self.n_fine, c / self.n_fine)
    }
    pub fn cell_center(&self, c: usize) -> [f64; 2] {
        let (cx, cy) = self.cell_xy(c);
        let h = self.fine_h();
        [(cx as f64 + 0.5) * h, (cy as f64 + 0.5) * h]
    }
    /// Cell vertices counter-clockwise from the lower-left corner.
    pub fn cell_nodes(&self, c: usize) -> [usize; 4] {
        let (cx, cy) = self.cell_xy(c);
        let n0 = self.node(cx, cy);
        let np = self.nodes_per_axis();
        [n0, n0 + 1, n0 + np + 1, n0 + np]
    }
    pub fn cell_element(&self, c: usize) -> usize {
        let (cx, cy) = self.cell_xy(c);
        self.element(cx / self.refine, cy / self.refine)
    }

    pub fn element(&self, ex: usize, ey: usize) -> usize {
        ey * self.n_coarse + ex
    }
    pub fn element_xy(&self, e: usize) -> (usize, usize) {
        (e % self.n_coarse, e / self.n_coarse)
    }
    /// Fine cells of an element, row-major.
    pub fn element_cells(&self, e: usize) -> impl Iterator<Item = usize> + '_ {
        self.block_cells(Block::single(self.element_xy(e)))
    }
    /// Fine nodes of the closed element, row-major.
    pub fn element_nodes(&self, e: usize) -> Vec<usize> {
        let (ex, ey) = self.element_xy(e);
        let r = self.refine;
        let mut out = Vec::with_capacity((r + 1) * (r + 1));
        for y in ey * r..=(ey + 1) * r {
            for x in ex * r..=(ex + 1) * r {
                out.push(self.node(x, y));
            }
        }
        out
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.edges
    }
    pub fn n_boundary_edges(&self) -> usize {
        self.edges.len()
    }
    pub fn has_dirichlet(&self) -> bool {
        self.edges.iter().any(|e| e.label == BoundaryLabel::Dirichlet)
    }

    /// Fine cells covered by a block of coarse elements, row-major.
    pub fn block_cells(&self, b: Block) -> impl Iterator<Item = usize> + '_ {
        let r = self.refine;
        (b.y0 * r..(b.y1 + 1) * r)
            .flat_map(move |cy| (b.x0 * r..(b.x1 + 1) * r).map(move |cx| self.cell(cx, cy)))
    }

    /// Boundary edges lying on the closure of a block.
    pub fn block_boundary_edges(&self, b: Block) -> impl Iterator<Item = (usize, &BoundaryEdge)> + '_ {
        self.edges.iter().enumerate().filter(move |(_, e)| {
            let (ex, ey) = self.element_xy(e.element);
            b.contains(ex, ey)
        })
    }

    pub fn whole_block(&self) -> Block {
        Block {
            x0: 0,
            x1: self.n_coarse - 1,
            y0: 0,
            y1: self.n_coarse - 1,
        }
    }
}

/// Axis-aligned rectangle of coarse elements, inclusive bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Block {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl Block {
    pub fn single((ex, ey): (usize, usize)) -> Self {
        Block {
            x0: ex,
            x1: ex,
            y0: ey,
            y1: ey,
        }
    }

    /// Chebyshev ball of radius `layers` around `(ex, ey)`, clipped to the grid.
    pub fn around((ex, ey): (usize, usize), layers: usize, n_coarse: usize) -> Self {
        Block {
            x0: ex.saturating_sub(layers),
            x1: (ex + layers).min(n_coarse - 1),
            y0: ey.saturating_sub(layers),
            y1: (ey + layers).min(n_coarse - 1),
        }
    }

    pub fn contains(&self, ex: usize, ey: usize) -> bool {
        (self.x0..=self.x1).contains(&ex) && (self.y0..=self.y1).contains(&ey)
    }

    pub fn len(&self) -> usize {
        (self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn elements(&self, n_coarse: usize) -> Vec<usize> {
        (self.y0..=self.y1)
            .flat_map(|ey| (self.x0..=self.x1).map(move |ex| ey * n_coarse + ex))
            .collect()
    }
}

/// Free fine DOFs of a block: nodes of the closed block, minus those on the
/// part of the block boundary inside Ω and minus Dirichlet nodes.
#[derive(Clone, Debug)]
pub struct RegionSpace {
    pub block: Block,
    nx0: usize,
    ny0: usize,
    width: usize,
    height: usize,
    local_of: Vec<u32>,
    dofs: Vec<usize>,
}

const NONE: u32 = u32::MAX;

impl RegionSpace {
    pub fn new(geom: &GridGeometry, block: Block) -> Self {
        let r = geom.refine();
        let nf = geom.n_fine();
        let (nx0, nx1) = (block.x0 * r, (block.x1 + 1) * r);
        let (ny0, ny1) = (block.y0 * r, (block.y1 + 1) * r);
        let width = nx1 - nx0 + 1;
        let height = ny1 - ny0 + 1;
        let mut local_of = vec![NONE; width * height];
        let mut dofs = Vec::new();
        for y in ny0..=ny1 {
            let y_cut = (y == ny0 && ny0 > 0) || (y == ny1 && ny1 < nf);
            for x in nx0..=nx1 {
                let x_cut = (x == nx0 && nx0 > 0) || (x == nx1 && nx1 < nf);
                let n = geom.node(x, y);
                if y_cut || x_cut || geom.is_dirichlet(n) {
                    continue;
                }
                local_of[(y - ny0) * width + (x - nx0)] = dofs.len() as u32;
                dofs.push(n);
            }
        }
        RegionSpace {
            block,
            nx0,
            ny0,
            width,
            height,
            local_of,
            dofs,
        }
    }

    /// The global space V (all non-Dirichlet fine nodes).
    pub fn whole(geom: &GridGeometry) -> Self {
        Self::new(geom, geom.whole_block())
    }

    /// Global fine-node indices of the free DOFs, in ascending order.
    pub fn dofs(&self) -> &[usize] {
        &self.dofs
    }

    pub fn len(&self) -> usize {
        self.dofs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dofs.is_empty()
    }

    /// Local DOF index of a global fine node, if free in this region.
    pub fn local(&self, geom: &GridGeometry, node: usize) -> Option<usize> {
        let (x, y) = geom.node_xy(node);
        if x < self.nx0 || y < self.ny0 || x >= self.nx0 + self.width || y >= self.ny0 + self.height {
            return None;
        }
        let l = self.local_of[(y - self.ny0) * self.width + (x - self.nx0)];
        (l != NONE).then_some(l as usize)
    }

    /// Zero-extends a region vector to a global nodal vector.
    pub fn extend(&self, local: &[f64], n_nodes: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_nodes];
        for (&n, &v) in self.dofs.iter().zip(local) {
            out[n] = v;
        }
        out
    }

    /// Restricts a global nodal vector to the region's free DOFs.
    pub fn restrict(&self, global: &[f64]) -> Vec<f64> {
        self.dofs.iter().map(|&n| global[n]).collect()
    }
}

/// Oversampled region K_i^m.
#[derive(Clone, Debug)]
pub struct OversampleRegion {
    pub center: usize,
    pub layers: usize,
    pub block: Block,
    /// Coarse elements in the region, ascending.
    pub elements: Vec<usize>,
    /// Free fine nodes (V_i^m), ascending.
    pub fine_dofs: Vec<usize>,
}

/// Computes K_i^m as the clipped Chebyshev block of radius `m` around `K_i`.
pub fn oversample_region(geom: &GridGeometry, i: usize, m: usize) -> Result<OversampleRegion> {
    if i >= geom.n_elements() {
        return Err(Error::InvalidParameter(format!(
            "element index {i} out of range (N = {})",
            geom.n_elements()
        )));
    }
    if m == 0 {
        return Err(Error::InvalidParameter("oversampling layers must be >= 1".into()));
    }
    let block = Block::around(geom.element_xy(i), m, geom.n_coarse());
    let space = RegionSpace::new(geom, block);
    Ok(OversampleRegion {
        center: i,
        layers: m,
        block,
        elements: block.elements(geom.n_coarse()),
        fine_dofs: space.dofs().to_vec(),
    })
}

/// Overlap constant bounding `#{K ⊂ K_i^m} <= C_ol m^2` on this mesh family.
pub const OVERLAP_CONSTANT: usize = 9;
