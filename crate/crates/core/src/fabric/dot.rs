use std::fmt::Write;

use super::{Direction, Fabric};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, Default)]
pub struct DotOptions {
    /// Draw dead links dashed instead of omitting them.
    pub show_pruned: bool,
}

/// Graphviz rendering of the grid: one node per `(layer, scale)`, laid out
/// with layers left to right and scales top to bottom.
pub fn export_dot<T: Scalar>(fabric: &Fabric<T>, opts: DotOptions) -> String {
    let d = fabric.dims;
    let grid = fabric.grid();
    let mut s = String::new();
    let _ = writeln!(s, "digraph fabric {{");
    let _ = writeln!(s, "  rankdir=LR;");
    let _ = writeln!(s, "  node [shape=circle, fontsize=10];");
    for l in 0..d.layers {
        let _ = writeln!(s, "  subgraph layer_{l} {{");
        let _ = writeln!(s, "    rank=same;");
        for sc in 0..d.scales {
            let n = super::NodeId::new(l, sc);
            let shape = if n == grid.input() || n == grid.output() {
                ", shape=doublecircle"
            } else {
                ""
            };
            let _ = writeln!(s, "    n{l}_{sc} [label=\"{l},{sc}\"{shape}];");
        }
        let _ = writeln!(s, "  }}");
    }
    for link in &fabric.links {
        if !link.alive && !opts.show_pruned {
            continue;
        }
        let color = match link.direction {
            Direction::Same => "black",
            Direction::Down | Direction::ColumnDown => "blue",
            Direction::Up => "red",
        };
        let style = if link.alive {
            String::new()
        } else {
            ", style=dashed, color=gray".to_string()
        };
        let color = if link.alive {
            format!(", color={color}")
        } else {
            String::new()
        };
        let _ = writeln!(
            s,
            "  n{}_{} -> n{}_{} [id=\"l{}\"{color}{style}];",
            link.from.layer, link.from.scale, link.to.layer, link.to.scale, link.id.0
        );
    }
    let _ = writeln!(s, "}}");
    s
}
