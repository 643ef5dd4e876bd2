//! Subdomains, directed interfaces and the monolithic reference problem.

use serde::{Deserialize, Serialize};

use super::DdError;
use crate::pde::{BoundarySpec, InterfaceKind, LocalOperator, Mesh, Rect, ScalarField, Segment, Side, SideCondition};
use crate::randfield::FieldConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubdomainSpec {
    pub rect: Rect,
    pub field: FieldConfig,
    /// Segment whose line integral of `u` is this subdomain's output.
    pub output: Segment,
}

/// Directed interface: `receiver` gets data of `kind` from `sender` on its `side`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub receiver: usize,
    pub sender: usize,
    pub side: Side,
    pub kind: InterfaceKind,
    /// Relaxation factor; zero means plain replacement.
    pub theta: f64,
    /// Retained POD modes for this edge's parameters.
    pub modes: usize,
}

impl Edge {
    pub fn sender_side(&self) -> Side {
        self.side.opposite()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub subdomains: Vec<SubdomainSpec>,
    pub edges: Vec<Edge>,
    pub h: f64,
    pub source: f64,
}

impl Decomposition {
    /// Two unit squares side by side on `(0,2)×(0,1)`; the left one takes
    /// Dirichlet data from the right one, which takes Neumann data back.
    pub fn two_component() -> Self {
        let field = |mean| FieldConfig { mean, sigma: 0.5, corr_len: 1.0, modes: 14 };
        Self {
            subdomains: vec![
                SubdomainSpec {
                    rect: Rect::new(0.0, 1.0, 0.0, 1.0),
                    field: field(2.0),
                    output: Segment::Vertical { at: 0.5, from: 0.0, to: 1.0 },
                },
                SubdomainSpec {
                    rect: Rect::new(1.0, 2.0, 0.0, 1.0),
                    field: field(2.0),
                    output: Segment::Vertical { at: 1.5, from: 0.0, to: 1.0 },
                },
            ],
            edges: vec![
                Edge {
                    receiver: 0,
                    sender: 1,
                    side: Side::Right,
                    kind: InterfaceKind::Dirichlet,
                    theta: 0.1,
                    modes: 2,
                },
                Edge { receiver: 1, sender: 0, side: Side::Left, kind: InterfaceKind::Neumann, theta: 0.0, modes: 6 },
            ],
            h: 1.0 / 16.0,
            source: 100.0,
        }
    }

    /// Three unit squares on `(0,3)×(0,1)`; the middle one takes Dirichlet
    /// data from both neighbours, which take Neumann data from it.
    pub fn three_component() -> Self {
        let field = |mean| FieldConfig { mean, sigma: 0.5, corr_len: 0.5, modes: 14 };
        Self {
            subdomains: vec![
                SubdomainSpec {
                    rect: Rect::new(0.0, 1.0, 0.0, 1.0),
                    field: field(3.0),
                    output: Segment::Vertical { at: 0.5, from: 0.0, to: 1.0 },
                },
                SubdomainSpec {
                    rect: Rect::new(1.0, 2.0, 0.0, 1.0),
                    field: field(2.0),
                    output: Segment::Horizontal { at: 0.5, from: 1.0, to: 2.0 },
                },
                SubdomainSpec {
                    rect: Rect::new(2.0, 3.0, 0.0, 1.0),
                    field: field(3.0),
                    output: Segment::Vertical { at: 2.5, from: 0.0, to: 1.0 },
                },
            ],
            edges: vec![
                Edge { receiver: 0, sender: 1, side: Side::Right, kind: InterfaceKind::Neumann, theta: 0.0, modes: 6 },
                Edge { receiver: 1, sender: 0, side: Side::Left, kind: InterfaceKind::Dirichlet, theta: 0.1, modes: 2 },
                Edge {
                    receiver: 1,
                    sender: 2,
                    side: Side::Right,
                    kind: InterfaceKind::Dirichlet,
                    theta: 0.1,
                    modes: 2,
                },
                Edge { receiver: 2, sender: 1, side: Side::Left, kind: InterfaceKind::Neumann, theta: 0.0, modes: 6 },
            ],
            h: 1.0 / 16.0,
            source: 100.0,
        }
    }

    pub fn len(&self) -> usize {
        self.subdomains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subdomains.is_empty()
    }

    /// Indices of edges received by `sub`, in edge order.
    pub fn incoming(&self, sub: usize) -> Vec<usize> {
        (0..self.edges.len()).filter(|&e| self.edges[e].receiver == sub).collect()
    }

    /// Indices of edges sent by `sub`, in edge order.
    pub fn outgoing(&self, sub: usize) -> Vec<usize> {
        (0..self.edges.len()).filter(|&e| self.edges[e].sender == sub).collect()
    }

    /// The edge carrying data in the opposite direction.
    pub fn reverse(&self, e: usize) -> Option<usize> {
        let ed = &self.edges[e];
        self.edges.iter().position(|o| o.receiver == ed.sender && o.sender == ed.receiver)
    }

    pub fn validate(&self) -> Result<(), DdError> {
        let bad = |m: String| Err(DdError::Config(m));
        if self.subdomains.is_empty() {
            return bad("no subdomains".into());
        }
        for s in &self.subdomains {
            s.field.validate().map_err(|e| DdError::Config(e.to_string()))?;
            Mesh::new(s.rect, self.h)?;
        }
        for (k, e) in self.edges.iter().enumerate() {
            if e.receiver >= self.len() || e.sender >= self.len() || e.receiver == e.sender {
                return bad(format!("edge {k} references invalid subdomains"));
            }
            if !(e.theta >= 0.0 && e.theta <= 1.0) {
                return bad(format!("edge {k}: relaxation {} outside [0, 1]", e.theta));
            }
            if e.modes == 0 {
                return bad(format!("edge {k}: at least one mode is required"));
            }
            let Some(r) = self.reverse(k) else {
                return bad(format!("edge {k} ({} <- {}) has no reverse edge", e.receiver, e.sender));
            };
            let re = &self.edges[r];
            if re.side != e.side.opposite() {
                return bad(format!("edges {k} and {r} do not face each other"));
            }
            if re.kind == e.kind {
                return bad(format!("edges {k} and {r} must pair a Dirichlet with a Neumann condition"));
            }
            if self.edges.iter().filter(|o| o.receiver == e.receiver && o.side == e.side).count() > 1 {
                return bad(format!("subdomain {} has two interfaces on its {:?} side", e.receiver, e.side));
            }
            let (a, b) = (&self.subdomains[e.receiver].rect, &self.subdomains[e.sender].rect);
            let touching = match e.side {
                Side::Right => a.x1 == b.x0 && a.y0 == b.y0 && a.y1 == b.y1,
                Side::Left => a.x0 == b.x1 && a.y0 == b.y0 && a.y1 == b.y1,
                Side::Top => a.y1 == b.y0 && a.x0 == b.x0 && a.x1 == b.x1,
                Side::Bottom => a.y0 == b.y1 && a.x0 == b.x0 && a.x1 == b.x1,
            };
            if !touching {
                return bad(format!("edge {k}: subdomains {} and {} do not share the full side", e.receiver, e.sender));
            }
        }
        for i in 0..self.len() {
            if self.edges.iter().filter(|e| e.receiver == i).count() >= 4 {
                return bad(format!("subdomain {i} has no exterior boundary"));
            }
        }
        Ok(())
    }

    pub fn mesh(&self, sub: usize) -> Result<Mesh, DdError> {
        Ok(Mesh::new(self.subdomains[sub].rect, self.h)?)
    }

    pub fn boundary(&self, sub: usize) -> BoundarySpec {
        let mut bc = BoundarySpec::all_exterior();
        for e in self.edges.iter().filter(|e| e.receiver == sub) {
            bc.sides[e.side.index()] = SideCondition::Interface(e.kind);
        }
        bc
    }

    pub fn source(&self) -> ScalarField {
        ScalarField::Constant(self.source)
    }

    /// Number of nodal values carried by edge `e`.
    pub fn edge_dofs(&self, e: usize) -> Result<usize, DdError> {
        Ok(self.mesh(self.edges[e].receiver)?.side_nodes(self.edges[e].side).len())
    }

    /// Bounding rectangle of all subdomains.
    pub fn bounding_rect(&self) -> Rect {
        let r = self.subdomains.iter().map(|s| s.rect);
        Rect::new(
            r.clone().map(|r| r.x0).fold(f64::INFINITY, f64::min),
            r.clone().map(|r| r.x1).fold(f64::NEG_INFINITY, f64::max),
            r.clone().map(|r| r.y0).fold(f64::INFINITY, f64::min),
            r.map(|r| r.y1).fold(f64::NEG_INFINITY, f64::max),
        )
    }

    /// Monolithic operator on the bounding rectangle with the per-subdomain
    /// nodal fields; the coefficient may jump across interfaces.
    pub fn global_operator(&self, fields: &[Vec<f64>]) -> Result<(Mesh, LocalOperator), DdError> {
        let gmesh = Mesh::new(self.bounding_rect(), self.h)?;
        let meshes: Vec<Mesh> = (0..self.len()).map(|i| self.mesh(i)).collect::<Result<_, _>>()?;
        let mut cells = Vec::with_capacity(gmesh.num_elements());
        for i in 0..gmesh.nx {
            for j in 0..gmesh.ny {
                let [x0, y0] = gmesh.coords(gmesh.node(i, j));
                let (cx, cy) = (x0 + 0.5 * self.h, y0 + 0.5 * self.h);
                let sub = self
                    .subdomains
                    .iter()
                    .position(|s| s.rect.x0 <= cx && cx <= s.rect.x1 && s.rect.y0 <= cy && cy <= s.rect.y1)
                    .ok_or_else(|| DdError::Config(format!("cell at ({cx}, {cy}) is not covered by any subdomain")))?;
                let m = &meshes[sub];
                let (oi, oj) = offsets(&gmesh, m);
                let corners = m.element_nodes(i - oi, j - oj).map(|k| fields[sub][k]);
                cells.push(corners);
            }
        }
        let op = LocalOperator::assemble(
            &gmesh,
            crate::pde::Diffusion::PerElement(&cells),
            self.source(),
            BoundarySpec::all_exterior(),
        )?;
        Ok((gmesh, op))
    }
}

/// Index offsets of `sub` inside `global`.
pub fn offsets(global: &Mesh, sub: &Mesh) -> (usize, usize) {
    let oi = ((sub.rect.x0 - global.rect.x0) / global.h).round() as usize;
    let oj = ((sub.rect.y0 - global.rect.y0) / global.h).round() as usize;
    (oi, oj)
}

/// Restriction of a global nodal vector to a subdomain mesh.
pub fn restrict(global: &Mesh, u: &[f64], sub: &Mesh) -> Vec<f64> {
    let (oi, oj) = offsets(global, sub);
    (0..sub.num_nodes())
        .map(|n| {
            let (i, j) = (n / (sub.ny + 1), n % (sub.ny + 1));
            u[global.node(i + oi, j + oj)]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        Decomposition::two_component().validate().unwrap();
        Decomposition::three_component().validate().unwrap();
    }

    #[test]
    fn same_kind_on_both_sides_is_rejected() {
        let mut d = Decomposition::two_component();
        d.edges[1].kind = InterfaceKind::Dirichlet;
        assert!(matches!(d.validate(), Err(DdError::Config(_))));
    }

    #[test]
    fn missing_reverse_edge_is_rejected() {
        let mut d = Decomposition::two_component();
        d.edges.pop();
        assert!(d.validate().is_err());
    }

    #[test]
    fn neighbour_lists() {
        let d = Decomposition::three_component();
        assert_eq!(d.incoming(1), vec![1, 2]);
        assert_eq!(d.outgoing(1), vec![0, 3]);
        assert_eq!(d.reverse(1), Some(0));
    }
}
