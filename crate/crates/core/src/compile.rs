//! Knowledge compilation of guards into arithmetic circuits.
//!
//! A formula is expanded on one variable at a time (Shannon expansion) in a
//! fixed variable order. Each expansion step becomes
//! `Sum(Product(x, hi), Product(!x, lo))`, so every sum is deterministic (its
//! branches disagree on `x`) and every product is decomposable (`hi`/`lo` no
//! longer mention `x`). Residual formulas are memoized and decision nodes are
//! hash-consed, which makes the result a reduced ordered decision diagram
//! expressed with sum/product/leaf nodes.
//!
//! Variables a node does not mention marginalize to 1, so the circuit needs no
//! smoothing to give the weighted model count for probability weights.

use std::collections::HashMap;
use std::io::{self, Write};

use thiserror::Error;

use crate::logic::Formula;

pub const DEFAULT_NODE_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompileError {
    #[error("circuit exceeds the node limit of {cap}")]
    ResourceLimit { cap: usize },
    #[error("variable order is not a permutation of 0..{vocab_size}")]
    InvalidOrder { vocab_size: usize },
    #[error("formula mentions variable {var} outside a vocabulary of {vocab_size}")]
    VariableOutOfRange { var: usize, vocab_size: usize },
    #[error("probability vector has length {found}, circuit expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("probability {value} at index {index} is outside [0, 1]")]
    InvalidProbability { index: usize, value: f64 },
}

pub type Result<T> = std::result::Result<T, CompileError>;

/// Per-variable probabilities of being true.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(CompileError::InvalidProbability { index, value });
        }
        Ok(ProbVector(values))
    }

    pub fn uniform(len: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WmcResult {
    pub value: f64,
    pub gradient: Option<Vec<f64>>,
}

/// Circuit node. Children of `Sum`/`Product` live in a shared edge array,
/// addressed by `start..start + len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Node {
    Leaf { var: u32, positive: bool },
    Const(bool),
    Sum { start: u32, len: u32 },
    Product { start: u32, len: u32 },
}

/// Evaluation instruction; binary gates carry their operands inline.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Pos(u32),
    Neg(u32),
    Const(f64),
    Add(u32, u32),
    Mul(u32, u32),
    AddN(u32, u32),
    MulN(u32, u32),
}

/// Node arena shared by single- and multi-rooted circuits. Children precede
/// parents.
#[derive(Debug, Clone, PartialEq)]
struct Circuit {
    nodes: Vec<Node>,
    edges: Vec<u32>,
    ops: Vec<Op>,
    vocab_size: usize,
}

impl Circuit {
    fn new(nodes: Vec<Node>, edges: Vec<u32>, vocab_size: usize) -> Self {
        let ops = nodes
            .iter()
            .map(|node| match *node {
                Node::Leaf { var, positive: true } => Op::Pos(var),
                Node::Leaf { var, positive: false } => Op::Neg(var),
                Node::Const(b) => Op::Const(b as u8 as f64),
                Node::Sum { start, len } | Node::Product { start, len } => {
                    let sum = matches!(node, Node::Sum { .. });
                    match edges[start as usize..(start + len) as usize] {
                        [a, b] if sum => Op::Add(a, b),
                        [a, b] => Op::Mul(a, b),
                        _ if sum => Op::AddN(start, start + len),
                        _ => Op::MulN(start, start + len),
                    }
                }
            })
            .collect();
        Circuit {
            nodes,
            edges,
            ops,
            vocab_size,
        }
    }

    fn children(&self, id: usize) -> &[u32] {
        match self.nodes[id] {
            Node::Sum { start, len } | Node::Product { start, len } => {
                &self.edges[start as usize..(start + len) as usize]
            }
            _ => &[],
        }
    }

    fn forward(&self, p: &[f64], values: &mut Vec<f64>) {
        // Every slot is overwritten below.
        values.resize(self.ops.len(), 0.0);
        for i in 0..self.ops.len() {
            values[i] = match self.ops[i] {
                Op::Pos(v) => p[v as usize],
                Op::Neg(v) => 1.0 - p[v as usize],
                Op::Const(c) => c,
                Op::Add(a, b) => values[a as usize] + values[b as usize],
                Op::Mul(a, b) => values[a as usize] * values[b as usize],
                Op::AddN(lo, hi) => self.edges[lo as usize..hi as usize]
                    .iter()
                    .map(|&c| values[c as usize])
                    .sum(),
                Op::MulN(lo, hi) => self.edges[lo as usize..hi as usize]
                    .iter()
                    .map(|&c| values[c as usize])
                    .product(),
            };
        }
    }

    /// Forward pass over `inputs.len()` independent lanes. Node `i`, lane `l`
    /// lands in `values[i * lanes + l]`.
    fn forward_lanes(&self, inputs: &[&[f64]], values: &mut Vec<f64>) {
        let lanes = inputs.len();
        values.resize(self.ops.len() * lanes, 0.0);
        for i in 0..self.ops.len() {
            let (done, rest) = values.split_at_mut(i * lanes);
            let out = &mut rest[..lanes];
            let lane = |c: u32| &done[c as usize * lanes..(c as usize + 1) * lanes];
            match self.ops[i] {
                Op::Pos(v) => out.iter_mut().zip(inputs).for_each(|(o, p)| *o = p[v as usize]),
                Op::Neg(v) => out.iter_mut().zip(inputs).for_each(|(o, p)| *o = 1.0 - p[v as usize]),
                Op::Const(c) => out.fill(c),
                Op::Add(a, b) => {
                    for ((o, x), y) in out.iter_mut().zip(lane(a)).zip(lane(b)) {
                        *o = x + y;
                    }
                }
                Op::Mul(a, b) => {
                    for ((o, x), y) in out.iter_mut().zip(lane(a)).zip(lane(b)) {
                        *o = x * y;
                    }
                }
                Op::AddN(lo, hi) | Op::MulN(lo, hi) => {
                    let sum = matches!(self.ops[i], Op::AddN(..));
                    out.fill(if sum { 0.0 } else { 1.0 });
                    for &c in &self.edges[lo as usize..hi as usize] {
                        for (o, x) in out.iter_mut().zip(lane(c)) {
                            if sum {
                                *o += x;
                            } else {
                                *o *= x;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Reverse sweep; `adj` holds the seeded node adjoints and is consumed.
    fn backward(&self, values: &[f64], adj: &mut [f64], grad: &mut [f64]) {
        for id in (0..self.nodes.len()).rev() {
            let a = adj[id];
            if a == 0.0 {
                continue;
            }
            match self.nodes[id] {
                Node::Leaf { var, positive } => {
                    grad[var as usize] += if positive { a } else { -a };
                }
                Node::Const(_) => {}
                Node::Sum { start, len } => {
                    for &c in &self.edges[start as usize..(start + len) as usize] {
                        adj[c as usize] += a;
                    }
                }
                Node::Product { start, len } => {
                    let kids = &self.edges[start as usize..(start + len) as usize];
                    if let [x, y] = *kids {
                        adj[x as usize] += a * values[y as usize];
                        adj[y as usize] += a * values[x as usize];
                        continue;
                    }
                    for (k, &c) in kids.iter().enumerate() {
                        let others: f64 = kids
                            .iter()
                            .enumerate()
                            .filter(|&(j, _)| j != k)
                            .map(|(_, &o)| values[o as usize])
                            .product();
                        adj[c as usize] += a * others;
                    }
                }
            }
        }
    }

    fn dump<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (id, node) in self.nodes.iter().enumerate() {
            match *node {
                Node::Leaf { var, positive } => {
                    writeln!(out, "{id} leaf {var} {}", if positive { '+' } else { '-' })?
                }
                Node::Const(b) => writeln!(out, "{id} const {}", b as u8)?,
                Node::Sum { .. } | Node::Product { .. } => {
                    let kind = if matches!(node, Node::Sum { .. }) { "sum" } else { "prod" };
                    write!(out, "{id} {kind}")?;
                    for c in self.children(id) {
                        write!(out, " {c}")?;
                    }
                    writeln!(out)?;
                }
            }
        }
        Ok(())
    }
}

/// Compiled guard. Nodes are topologically sorted and the root is last.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledGuard {
    circuit: Circuit,
}

impl CompiledGuard {
    pub fn nodes(&self) -> &[Node] {
        &self.circuit.nodes
    }

    pub fn root(&self) -> usize {
        self.circuit.nodes.len() - 1
    }

    pub fn vocab_size(&self) -> usize {
        self.circuit.vocab_size
    }

    pub fn len(&self) -> usize {
        self.circuit.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.circuit.nodes.is_empty()
    }

    pub fn children(&self, id: usize) -> &[u32] {
        self.circuit.children(id)
    }

    /// Variables mentioned by any leaf.
    pub fn support(&self) -> Vec<usize> {
        let mut vars: Vec<usize> = self
            .circuit
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { var, .. } => Some(*var as usize),
                _ => None,
            })
            .collect();
        vars.sort_unstable();
        vars.dedup();
        vars
    }

    /// Weighted model count of the guard under `p`, with its gradient on request.
    pub fn wmc(&self, p: &ProbVector, want_gradient: bool) -> Result<WmcResult> {
        if p.len() != self.vocab_size() {
            return Err(CompileError::DimensionMismatch {
                expected: self.vocab_size(),
                found: p.len(),
            });
        }
        let mut values = Vec::new();
        let value = self.forward(p.as_slice(), &mut values);
        let gradient = want_gradient.then(|| {
            let mut grad = vec![0.0; self.vocab_size()];
            self.backward(&values, 1.0, &mut grad, &mut Vec::new());
            grad
        });
        Ok(WmcResult { value, gradient })
    }

    /// Bottom-up pass. `values` is caller-owned scratch and keeps the node
    /// values for a following [`CompiledGuard::backward`].
    pub(crate) fn forward(&self, p: &[f64], values: &mut Vec<f64>) -> f64 {
        self.circuit.forward(p, values);
        values[values.len() - 1]
    }

    /// Top-down adjoint pass: adds `upstream * ∂value/∂p` into `grad`.
    pub(crate) fn backward(&self, values: &[f64], upstream: f64, grad: &mut [f64], adj: &mut Vec<f64>) {
        adj.clear();
        adj.resize(self.len(), 0.0);
        let root = self.root();
        adj[root] = upstream;
        self.circuit.backward(values, adj, grad);
    }

    /// Fraction of the `2^|V|` interpretations that satisfy the guard, i.e. the
    /// WMC at `p = ½`. Exact in `f64` while the guard's support has at most 53
    /// variables.
    pub fn model_fraction(&self) -> f64 {
        let half = vec![0.5; self.vocab_size()];
        self.forward(&half, &mut Vec::new())
    }

    /// Number of models over the full vocabulary.
    pub fn model_count(&self) -> f64 {
        self.model_fraction() * 2f64.powi(self.vocab_size() as i32)
    }

    pub fn is_satisfiable(&self) -> bool {
        self.model_fraction() > 0.0
    }

    pub fn is_valid(&self) -> bool {
        self.model_fraction() == 1.0
    }

    /// Writes one node per line as `<id> <kind> <args...>`.
    pub fn dump<W: Write>(&self, out: W) -> io::Result<()> {
        self.circuit.dump(out)
    }
}

/// Several guards compiled into one circuit with shared subcircuits, one root
/// per guard. Evaluating all guards costs a single pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GuardSet {
    circuit: Circuit,
    roots: Vec<u32>,
}

impl GuardSet {
    pub fn len(&self) -> usize {
        self.roots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    pub fn n_nodes(&self) -> usize {
        self.circuit.nodes.len()
    }

    pub fn roots(&self) -> &[u32] {
        &self.roots
    }

    /// Node values for `p`; guard `k` evaluates to `values[roots()[k]]`.
    pub(crate) fn forward(&self, p: &[f64], values: &mut Vec<f64>) {
        self.circuit.forward(p, values)
    }

    /// Lane-batched [`GuardSet::forward`]; guard `k` in lane `l` evaluates to
    /// `values[roots()[k] * inputs.len() + l]`.
    pub(crate) fn forward_lanes(&self, inputs: &[&[f64]], values: &mut Vec<f64>) {
        self.circuit.forward_lanes(inputs, values)
    }

    /// Adds `Σ_k upstream[k] · ∂guard_k/∂p` into `grad`.
    pub(crate) fn backward(&self, values: &[f64], upstream: &[f64], grad: &mut [f64], adj: &mut Vec<f64>) {
        adj.clear();
        adj.resize(self.circuit.nodes.len(), 0.0);
        for (&r, &u) in self.roots.iter().zip(upstream) {
            adj[r as usize] += u;
        }
        self.circuit.backward(values, adj, grad);
    }

    pub fn dump<W: Write>(&self, out: W) -> io::Result<()> {
        self.circuit.dump(out)
    }
}

/// Guard compiler with a configurable variable order and node cap.
#[derive(Debug, Clone)]
pub struct Compiler {
    vocab_size: usize,
    rank: Vec<usize>,
    node_cap: usize,
}

impl Compiler {
    /// Compiler using declaration order.
    pub fn new(vocab_size: usize) -> Self {
        Compiler {
            vocab_size,
            rank: (0..vocab_size).collect(),
            node_cap: DEFAULT_NODE_CAP,
        }
    }

    /// Expands variables in the given order, which must be a permutation of
    /// `0..vocab_size`.
    pub fn with_order(mut self, order: &[usize]) -> Result<Self> {
        let mut rank = vec![usize::MAX; self.vocab_size];
        if order.len() != self.vocab_size {
            return Err(CompileError::InvalidOrder {
                vocab_size: self.vocab_size,
            });
        }
        for (pos, &v) in order.iter().enumerate() {
            if v >= self.vocab_size || rank[v] != usize::MAX {
                return Err(CompileError::InvalidOrder {
                    vocab_size: self.vocab_size,
                });
            }
            rank[v] = pos;
        }
        self.rank = rank;
        Ok(self)
    }

    pub fn with_node_cap(mut self, cap: usize) -> Self {
        self.node_cap = cap;
        self
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn compile(&self, f: &Formula) -> Result<CompiledGuard> {
        let (circuit, _) = self.build_rooted(std::slice::from_ref(f))?;
        Ok(CompiledGuard { circuit })
    }

    /// Compiles all formulas into one circuit sharing common subcircuits.
    pub fn compile_all(&self, fs: &[Formula]) -> Result<GuardSet> {
        let (circuit, roots) = self.build_rooted(fs)?;
        Ok(GuardSet { circuit, roots })
    }

    fn build_rooted(&self, fs: &[Formula]) -> Result<(Circuit, Vec<u32>)> {
        if let Some(var) = fs
            .iter()
            .filter_map(Formula::max_var)
            .find(|&v| v >= self.vocab_size)
        {
            return Err(CompileError::VariableOutOfRange {
                var,
                vocab_size: self.vocab_size,
            });
        }
        let mut b = Builder {
            compiler: self,
            nodes: Vec::new(),
            edges: Vec::new(),
            unique: HashMap::new(),
            memo: HashMap::new(),
        };
        let mut roots = Vec::with_capacity(fs.len());
        for f in fs {
            let root = match b.build(f)? {
                Ref::False => b.intern(Node::Const(false), &[])?,
                Ref::True => b.intern(Node::Const(true), &[])?,
                Ref::Node(id) => id,
            };
            roots.push(root);
        }
        Ok(b.finish(&roots))
    }
}

/// Compiles `f` over `vocab_size` variables in declaration order.
pub fn compile_guard(f: &Formula, vocab_size: usize) -> Result<CompiledGuard> {
    Compiler::new(vocab_size).compile(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Ref {
    False,
    True,
    Node(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Key {
    Leaf(u32, bool),
    Const(bool),
    Sum(Vec<u32>),
    Product(Vec<u32>),
}

struct Builder<'c> {
    compiler: &'c Compiler,
    nodes: Vec<Node>,
    edges: Vec<u32>,
    unique: HashMap<Key, u32>,
    memo: HashMap<Formula, Ref>,
}

impl Builder<'_> {
    fn build(&mut self, f: &Formula) -> Result<Ref> {
        match f {
            Formula::True => return Ok(Ref::True),
            Formula::False => return Ok(Ref::False),
            _ => {}
        }
        if let Some(&r) = self.memo.get(f) {
            return Ok(r);
        }
        if f.support_mask() == 0 {
            return Ok(if f.eval_bits(0) { Ref::True } else { Ref::False });
        }
        let var = self.branch_variable(f);
        let hi = self.build(&condition(f, var, true))?;
        let lo = self.build(&condition(f, var, false))?;
        let r = self.decision(var, hi, lo)?;
        self.memo.insert(f.clone(), r);
        Ok(r)
    }

    fn branch_variable(&self, f: &Formula) -> usize {
        let mask = f.support_mask();
        (0..self.compiler.vocab_size)
            .filter(|&v| mask >> v & 1 == 1)
            .min_by_key(|&v| self.compiler.rank[v])
            .expect("non-constant residual mentions a variable")
    }

    fn decision(&mut self, var: usize, hi: Ref, lo: Ref) -> Result<Ref> {
        if hi == lo {
            return Ok(hi);
        }
        let var = var as u32;
        let mut branches = Vec::with_capacity(2);
        for (branch, positive) in [(hi, true), (lo, false)] {
            let part = match branch {
                Ref::False => continue,
                Ref::True => self.intern(Node::Leaf { var, positive }, &[])?,
                Ref::Node(child) => {
                    let leaf = self.intern(Node::Leaf { var, positive }, &[])?;
                    self.intern_nary(false, &[leaf, child])?
                }
            };
            branches.push(part);
        }
        let id = match branches.as_slice() {
            [single] => *single,
            _ => self.intern_nary(true, &branches)?,
        };
        Ok(Ref::Node(id))
    }

    fn intern_nary(&mut self, sum: bool, children: &[u32]) -> Result<u32> {
        let node = if sum {
            Node::Sum { start: 0, len: 0 }
        } else {
            Node::Product { start: 0, len: 0 }
        };
        self.intern(node, children)
    }

    fn intern(&mut self, node: Node, children: &[u32]) -> Result<u32> {
        let key = match node {
            Node::Leaf { var, positive } => Key::Leaf(var, positive),
            Node::Const(b) => Key::Const(b),
            Node::Sum { .. } => Key::Sum(children.to_vec()),
            Node::Product { .. } => Key::Product(children.to_vec()),
        };
        if let Some(&id) = self.unique.get(&key) {
            return Ok(id);
        }
        if self.nodes.len() >= self.compiler.node_cap {
            return Err(CompileError::ResourceLimit {
                cap: self.compiler.node_cap,
            });
        }
        let node = match node {
            Node::Sum { .. } | Node::Product { .. } => {
                let start = self.edges.len() as u32;
                self.edges.extend_from_slice(children);
                let len = children.len() as u32;
                if matches!(node, Node::Sum { .. }) {
                    Node::Sum { start, len }
                } else {
                    Node::Product { start, len }
                }
            }
            other => other,
        };
        let id = self.nodes.len() as u32;
        self.nodes.push(node);
        self.unique.insert(key, id);
        Ok(id)
    }

    /// Keeps only nodes reachable from `roots`, renumbered in topological
    /// order. With a single root, the root ends up last.
    fn finish(self, roots: &[u32]) -> (Circuit, Vec<u32>) {
        let mut reachable = vec![false; self.nodes.len()];
        for &r in roots {
            reachable[r as usize] = true;
        }
        for id in (0..self.nodes.len()).rev() {
            if !reachable[id] {
                continue;
            }
            if let Node::Sum { start, len } | Node::Product { start, len } = self.nodes[id] {
                for &c in &self.edges[start as usize..(start + len) as usize] {
                    reachable[c as usize] = true;
                }
            }
        }
        let mut remap = vec![u32::MAX; self.nodes.len()];
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for id in 0..self.nodes.len() {
            if !reachable[id] {
                continue;
            }
            let node = match self.nodes[id] {
                Node::Sum { start, len } | Node::Product { start, len } => {
                    let new_start = edges.len() as u32;
                    edges.extend(
                        self.edges[start as usize..(start + len) as usize]
                            .iter()
                            .map(|&c| remap[c as usize]),
                    );
                    if matches!(self.nodes[id], Node::Sum { .. }) {
                        Node::Sum { start: new_start, len }
                    } else {
                        Node::Product { start: new_start, len }
                    }
                }
                other => other,
            };
            remap[id] = nodes.len() as u32;
            nodes.push(node);
        }
        let circuit = Circuit::new(nodes, edges, self.compiler.vocab_size);
        (circuit, roots.iter().map(|&r| remap[r as usize]).collect())
    }
}

/// Substitutes `var := value` and folds constants.
fn condition(f: &Formula, var: usize, value: bool) -> Formula {
    match f {
        Formula::True | Formula::False => f.clone(),
        Formula::Var(v) if *v == var => {
            if value {
                Formula::True
            } else {
                Formula::False
            }
        }
        Formula::Var(_) => f.clone(),
        Formula::Not(c) => match condition(c, var, value) {
            Formula::True => Formula::False,
            Formula::False => Formula::True,
            other => Formula::not(other),
        },
        Formula::And(cs) => {
            let mut kept = Vec::with_capacity(cs.len());
            for c in cs {
                match condition(c, var, value) {
                    Formula::False => return Formula::False,
                    Formula::True => {}
                    other => kept.push(other),
                }
            }
            Formula::and(kept)
        }
        Formula::Or(cs) => {
            let mut kept = Vec::with_capacity(cs.len());
            for c in cs {
                match condition(c, var, value) {
                    Formula::True => return Formula::True,
                    Formula::False => {}
                    other => kept.push(other),
                }
            }
            Formula::or(kept)
        }
    }
}
