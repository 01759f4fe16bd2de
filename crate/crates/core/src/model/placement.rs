use super::graph::{LayerOp, Node};
use super::spec::BootstrapPolicy;
use crate::error::{Error, Result};
use crate::layers::PoolKind;

/// Inserts bootstraps according to `policy` and fills in every node's
/// planned entry and exit levels.
///
/// The default policy bootstraps before every ReLU but the first two,
/// before the second pooling layer and before global pooling, then adds a
/// bootstrap right before any layer that would otherwise run out of levels.
/// The explicit policy never inserts anything and fails instead.
pub fn place_bootstraps(nodes: Vec<Node>, policy: BootstrapPolicy, budget: u32) -> Result<Vec<Node>> {
    let nodes = match policy {
        BootstrapPolicy::PaperDefault => {
            let mut counts = Counts::default();
            apply_rules(nodes, &mut counts)
        }
        BootstrapPolicy::Explicit => nodes,
    };
    let insert = policy == BootstrapPolicy::PaperDefault;
    let (nodes, _) = walk(nodes, budget, budget, insert)?;
    Ok(nodes)
}

#[derive(Default)]
struct Counts {
    relus: usize,
    pools: usize,
}

fn apply_rules(nodes: Vec<Node>, counts: &mut Counts) -> Vec<Node> {
    let mut out: Vec<Node> = Vec::with_capacity(nodes.len());
    for mut node in nodes {
        let wanted = match &mut node.op {
            LayerOp::Relu { .. } => {
                counts.relus += 1;
                counts.relus > 2
            }
            LayerOp::Pool(p) => {
                counts.pools += 1;
                counts.pools == 2 || p.kind == PoolKind::Global
            }
            LayerOp::Residual { body, shortcut } => {
                *body = apply_rules(std::mem::take(body), counts);
                *shortcut = apply_rules(std::mem::take(shortcut), counts);
                false
            }
            _ => false,
        };
        let after_bootstrap = matches!(out.last(), Some(n) if n.op == LayerOp::Bootstrap);
        if wanted && !after_bootstrap {
            out.push(Node::bootstrap(format!("{}.bootstrap", node.id), node.input));
        }
        out.push(node);
    }
    out
}

fn walk(nodes: Vec<Node>, mut level: u32, budget: u32, insert: bool) -> Result<(Vec<Node>, u32)> {
    let mut out = Vec::with_capacity(nodes.len());
    for mut node in nodes {
        node.level_in = level;
        match &mut node.op {
            LayerOp::Bootstrap => level = budget,
            LayerOp::Residual { body, shortcut } => {
                let (b, body_level) = walk(std::mem::take(body), level, budget, insert)?;
                let (s, short_level) = walk(std::mem::take(shortcut), level, budget, insert)?;
                *body = b;
                *shortcut = s;
                level = body_level.min(short_level);
            }
            _ => {
                let cost = node.cost()?.expect("plain layers have a fixed cost");
                if cost > budget {
                    return Err(Error::UnbuildableModel {
                        layer: node.id.clone(),
                        cost,
                        budget,
                    });
                }
                if cost > level {
                    if !insert {
                        return Err(Error::DepthBudgetExceeded {
                            layer: node.id.clone(),
                            cost,
                            available: level,
                        });
                    }
                    let mut boot = Node::bootstrap(format!("{}.bootstrap", node.id), node.input);
                    boot.level_in = level;
                    boot.level_out = budget;
                    out.push(boot);
                    level = budget;
                    node.level_in = level;
                }
                level -= cost;
            }
        }
        node.level_out = level;
        out.push(node);
    }
    Ok((out, level))
}

/// Number of bootstrap nodes, nested ones included.
pub fn count_bootstraps(nodes: &[Node]) -> usize {
    nodes
        .iter()
        .map(|n| match &n.op {
            LayerOp::Bootstrap => 1,
            LayerOp::Residual { body, shortcut } => count_bootstraps(body) + count_bootstraps(shortcut),
            _ => 0,
        })
        .sum()
}
