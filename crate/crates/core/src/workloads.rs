//! Op-trace generators for the persistent microbenchmarks.
//!
//! Each generator runs the data structure for real on an in-memory model and
//! emits the line-granular reads and writes it would perform on persistent
//! memory. Nothing is ever flushed explicitly: with eADR the caches are part
//! of the persistence domain.
//!
//! Layout within a core's arena:
//!
//! ```text
//! array    [data .......................................]
//! queue    [meta][ring of txn_size entries .............]
//! btree    [meta][64 B nodes ........][value blobs .....]
//! rbtree   [meta][64 B nodes ........][value blobs .....]
//! hash     [buckets, 64 B each ......][value blobs .....]
//! ```

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::line::{DataLine, PhysAddr, LINE_BYTES};
use crate::nvm::parse_addr;

/// Distance between the arenas of consecutive cores.
pub const CORE_ARENA_STRIDE: u64 = 64 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkloadKind {
    Array,
    Queue,
    Btree,
    Hash,
    Rbtree,
}

impl WorkloadKind {
    pub const ALL: [WorkloadKind; 5] = [
        WorkloadKind::Array,
        WorkloadKind::Queue,
        WorkloadKind::Btree,
        WorkloadKind::Hash,
        WorkloadKind::Rbtree,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WorkloadKind::Array => "array",
            WorkloadKind::Queue => "queue",
            WorkloadKind::Btree => "btree",
            WorkloadKind::Hash => "hash",
            WorkloadKind::Rbtree => "rbtree",
        }
    }
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WorkloadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WorkloadKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::config("workload", format!("unknown workload `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TxnSpec {
    /// Bytes written per transaction; a multiple of 64.
    pub txn_size: u64,
    pub n_txns: u64,
    pub rng_seed: u64,
    pub value_seed: u64,
    /// Bytes of address space per core.
    pub arena_bytes: u64,
    /// Stop once this many ops have been emitted.
    pub op_limit: Option<u64>,
}

impl Default for TxnSpec {
    fn default() -> Self {
        TxnSpec {
            txn_size: 64,
            n_txns: 1000,
            rng_seed: 1,
            value_seed: 2,
            arena_bytes: 128 << 10,
            op_limit: None,
        }
    }
}

impl TxnSpec {
    pub fn validate(&self) -> Result<()> {
        if self.txn_size == 0 || !self.txn_size.is_multiple_of(LINE_BYTES) {
            return Err(Error::config("txn_size", "must be a non-zero multiple of 64"));
        }
        if !self.arena_bytes.is_multiple_of(LINE_BYTES) {
            return Err(Error::config("arena_bytes", "must be a multiple of 64"));
        }
        if self.arena_bytes > CORE_ARENA_STRIDE {
            return Err(Error::config("arena_bytes", "must not exceed the 64 MiB per-core stride"));
        }
        Ok(())
    }

    fn lines_per_txn(&self) -> u64 {
        self.txn_size / LINE_BYTES
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpKind {
    Read,
    Write,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Op {
    pub core: usize,
    pub kind: OpKind,
    pub addr: PhysAddr,
    /// Present on writes.
    pub value: Option<DataLine>,
}

impl Op {
    pub fn read(core: usize, addr: PhysAddr) -> Self {
        Op {
            core,
            kind: OpKind::Read,
            addr,
            value: None,
        }
    }

    pub fn write(core: usize, addr: PhysAddr, value: DataLine) -> Self {
        Op {
            core,
            kind: OpKind::Write,
            addr,
            value: Some(value),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OpTrace {
    pub ops: Vec<Op>,
}

impl OpTrace {
    pub fn new(ops: Vec<Op>) -> Self {
        OpTrace { ops }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Lowest and one-past-highest byte address touched.
    pub fn address_range(&self) -> Option<(u64, u64)> {
        let lo = self.ops.iter().map(|o| o.addr.value()).min()?;
        let hi = self.ops.iter().map(|o| o.addr.value()).max()?;
        Some((lo, hi + LINE_BYTES))
    }

    pub fn writes(&self) -> usize {
        self.ops.iter().filter(|o| o.kind == OpKind::Write).count()
    }

    /// One op per line: `core r|w 0xaddr hex|-`.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.ops.len() * 150);
        for op in &self.ops {
            let (kind, value) = match op.kind {
                OpKind::Read => ('r', "-".to_string()),
                OpKind::Write => ('w', op.value.unwrap_or_default().to_hex()),
            };
            out.push_str(&format!("{} {kind} {:#x} {value}\n", op.core, op.addr.value()));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut ops = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: &str| Error::Parse {
                line: i + 1,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [core, kind, addr, value] = fields[..] else {
                return Err(err("expected `core op addr value`"));
            };
            let core = core.parse().map_err(|_| err("bad core id"))?;
            let addr = parse_addr(addr).ok_or_else(|| err("bad address"))?;
            let op = match kind {
                "r" | "R" => Op::read(core, addr),
                "w" | "W" => Op::write(core, addr, DataLine::from_hex(value).ok_or_else(|| err("bad line value"))?),
                _ => return Err(err("op must be r or w")),
            };
            ops.push(op);
        }
        Ok(OpTrace { ops })
    }
}

/// Accumulates one transaction's ops: each line is read at most once and
/// written once at the end with its final content.
struct TxnBuf<'a> {
    core: usize,
    ops: &'a mut Vec<Op>,
    seen: HashSet<u64>,
    dirty: Vec<(PhysAddr, DataLine)>,
}

impl<'a> TxnBuf<'a> {
    fn new(core: usize, ops: &'a mut Vec<Op>) -> Self {
        TxnBuf {
            core,
            ops,
            seen: HashSet::new(),
            dirty: Vec::new(),
        }
    }

    fn read(&mut self, addr: PhysAddr) {
        if self.seen.insert(addr.value()) {
            self.ops.push(Op::read(self.core, addr));
        }
    }

    fn write(&mut self, addr: PhysAddr, value: DataLine) {
        self.seen.insert(addr.value());
        match self.dirty.iter_mut().find(|(a, _)| *a == addr) {
            Some(entry) => entry.1 = value,
            None => self.dirty.push((addr, value)),
        }
    }

    fn commit(self) {
        let core = self.core;
        self.ops.extend(self.dirty.into_iter().map(|(a, v)| Op::write(core, a, v)));
    }
}

struct Values(ChaCha8Rng);

impl Values {
    fn new(seed: u64) -> Self {
        Values(ChaCha8Rng::seed_from_u64(seed))
    }

    /// A random line that is never all zero.
    fn line(&mut self) -> DataLine {
        let mut bytes = [0u8; 64];
        self.0.fill_bytes(&mut bytes);
        bytes[0] |= 1;
        DataLine(bytes)
    }
}

fn arena_too_small(arena: u64, reason: impl Into<String>) -> Error {
    Error::ArenaTooSmall {
        arena,
        reason: reason.into(),
    }
}

/// Trace of `kind` for core 0.
pub fn generate_trace(kind: WorkloadKind, spec: &TxnSpec) -> Result<OpTrace> {
    generate_for_core(kind, spec, 0)
}

/// Trace of `kind` for `core`, placed in that core's arena. Each core gets a
/// distinct key stream derived from the `TxnSpec` seeds.
pub fn generate_for_core(kind: WorkloadKind, spec: &TxnSpec, core: usize) -> Result<OpTrace> {
    spec.validate()?;
    let mut gen = Gen {
        spec,
        core,
        base: core as u64 * CORE_ARENA_STRIDE,
        ops: Vec::new(),
        keys: ChaCha8Rng::seed_from_u64(spec.rng_seed ^ (core as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)),
        values: Values::new(spec.value_seed ^ (core as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f)),
    };
    match kind {
        WorkloadKind::Array => gen.array()?,
        WorkloadKind::Queue => {
            let mut queue = QueueModel::new(spec, gen.base)?;
            for _ in 0..spec.n_txns {
                if gen.done() {
                    break;
                }
                let enqueue = if queue.is_empty() {
                    true
                } else if queue.is_full() {
                    false
                } else {
                    gen.keys.gen_bool(0.5)
                };
                queue.step(&mut gen, enqueue);
            }
        }
        WorkloadKind::Btree => gen.keyed(&mut BTreeModel::new(spec, gen.base)?)?,
        WorkloadKind::Rbtree => gen.keyed(&mut RbTreeModel::new(spec, gen.base)?)?,
        WorkloadKind::Hash => gen.keyed(&mut HashModel::new(spec, gen.base)?)?,
    }
    if let Some(limit) = spec.op_limit {
        gen.ops.truncate(limit as usize);
    }
    Ok(OpTrace { ops: gen.ops })
}

/// Trace of a queue driven by an explicit enqueue (`true`) / dequeue
/// (`false`) script.
pub fn queue_script(spec: &TxnSpec, script: &[bool]) -> Result<OpTrace> {
    spec.validate()?;
    let mut gen = Gen {
        spec,
        core: 0,
        base: 0,
        ops: Vec::new(),
        keys: ChaCha8Rng::seed_from_u64(spec.rng_seed),
        values: Values::new(spec.value_seed),
    };
    let mut queue = QueueModel::new(spec, 0)?;
    for &enqueue in script {
        if (enqueue && queue.is_full()) || (!enqueue && queue.is_empty()) {
            return Err(Error::config("script", "queue over- or underflow"));
        }
        queue.step(&mut gen, enqueue);
    }
    Ok(OpTrace { ops: gen.ops })
}

struct Gen<'a> {
    spec: &'a TxnSpec,
    core: usize,
    base: u64,
    ops: Vec<Op>,
    keys: ChaCha8Rng,
    values: Values,
}

impl Gen<'_> {
    fn done(&self) -> bool {
        self.spec.op_limit.is_some_and(|l| self.ops.len() as u64 >= l)
    }

    fn array(&mut self) -> Result<()> {
        let spec = self.spec;
        if spec.arena_bytes < spec.txn_size {
            return Err(arena_too_small(spec.arena_bytes, "array arena holds no whole transaction"));
        }
        let chunks = spec.arena_bytes / spec.txn_size;
        for t in 0..spec.n_txns {
            if self.done() {
                break;
            }
            let start = self.base + (t % chunks) * spec.txn_size;
            for l in 0..spec.lines_per_txn() {
                let addr = PhysAddr(start + l * LINE_BYTES);
                self.ops.push(Op::read(self.core, addr));
                let value = self.values.line();
                self.ops.push(Op::write(self.core, addr, value));
            }
        }
        Ok(())
    }

    fn keyed(&mut self, model: &mut dyn KeyedModel) -> Result<()> {
        let key_space = model.key_space();
        for _ in 0..self.spec.n_txns {
            if self.done() {
                break;
            }
            let key = self.keys.gen_range(0..key_space);
            let mut txn = TxnBuf::new(self.core, &mut self.ops);
            model.insert(key, &mut txn);
            let blob = model.value_addr(key);
            for l in 0..self.spec.lines_per_txn() {
                txn.write(blob.offset(l * LINE_BYTES), self.values.line());
            }
            txn.commit();
        }
        Ok(())
    }
}

trait KeyedModel {
    fn key_space(&self) -> u64;
    fn value_addr(&self, key: u64) -> PhysAddr;
    /// Inserts `key` (or finds it) and records the structure traffic.
    fn insert(&mut self, key: u64, txn: &mut TxnBuf<'_>);
}

/// Splits an arena into a structure half and a value-blob half and sizes the
/// key space so both always fit.
struct KeyedLayout {
    struct_base: u64,
    struct_lines: u64,
    value_base: u64,
    txn_size: u64,
    key_space: u64,
}

impl KeyedLayout {
    fn new(spec: &TxnSpec, base: u64, what: &str) -> Result<Self> {
        let half = spec.arena_bytes / 2 / LINE_BYTES * LINE_BYTES;
        let key_space = (half / spec.txn_size) * 3 / 4;
        // One header line plus one node or bucket per key.
        if key_space == 0 || (key_space + 1) * LINE_BYTES > half {
            return Err(arena_too_small(spec.arena_bytes, format!("{what} needs room for at least one key")));
        }
        Ok(KeyedLayout {
            struct_base: base,
            struct_lines: half / LINE_BYTES,
            value_base: base + half,
            txn_size: spec.txn_size,
            key_space,
        })
    }

    fn value_addr(&self, key: u64) -> PhysAddr {
        PhysAddr(self.value_base + key * self.txn_size)
    }

    /// Address of node `i`; line 0 of the structure area is the header.
    fn node_addr(&self, i: usize) -> PhysAddr {
        PhysAddr(self.struct_base + (i as u64 + 1) * LINE_BYTES)
    }

    fn header(&self) -> PhysAddr {
        PhysAddr(self.struct_base)
    }
}

struct QueueModel {
    meta: PhysAddr,
    ring_base: u64,
    capacity: u64,
    entry_bytes: u64,
    head: u64,
    tail: u64,
}

impl QueueModel {
    fn new(spec: &TxnSpec, base: u64) -> Result<Self> {
        let capacity = spec.arena_bytes.saturating_sub(LINE_BYTES) / spec.txn_size;
        if capacity == 0 {
            return Err(arena_too_small(spec.arena_bytes, "queue ring holds no entry"));
        }
        Ok(QueueModel {
            meta: PhysAddr(base),
            ring_base: base + LINE_BYTES,
            capacity,
            entry_bytes: spec.txn_size,
            head: 0,
            tail: 0,
        })
    }

    fn is_empty(&self) -> bool {
        self.head == self.tail
    }

    fn is_full(&self) -> bool {
        self.tail - self.head == self.capacity
    }

    fn meta_line(&self) -> DataLine {
        let mut line = DataLine::ZERO;
        line.set_u64(0, self.head);
        line.set_u64(1, self.tail);
        line
    }

    fn entry(&self, index: u64) -> u64 {
        self.ring_base + (index % self.capacity) * self.entry_bytes
    }

    fn step(&mut self, gen: &mut Gen<'_>, enqueue: bool) {
        let mut txn = TxnBuf::new(gen.core, &mut gen.ops);
        txn.read(self.meta);
        let lines = self.entry_bytes / LINE_BYTES;
        if enqueue {
            let entry = self.entry(self.tail);
            for l in 0..lines {
                txn.write(PhysAddr(entry + l * LINE_BYTES), gen.values.line());
            }
            self.tail += 1;
        } else {
            let entry = self.entry(self.head);
            for l in 0..lines {
                let addr = PhysAddr(entry + l * LINE_BYTES);
                txn.read(addr);
                txn.write(addr, DataLine::ZERO);
            }
            self.head += 1;
        }
        txn.write(self.meta, self.meta_line());
        txn.commit();
    }
}

const BTREE_MAX_KEYS: usize = 3;

#[derive(Clone, Debug, Default)]
struct BNode {
    keys: Vec<u64>,
    children: Vec<usize>,
}

impl BNode {
    fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// 2-3-4 tree with top-down splitting; one node per 64 B line.
struct BTreeModel {
    layout: KeyedLayout,
    nodes: Vec<BNode>,
    root: usize,
}

impl BTreeModel {
    fn new(spec: &TxnSpec, base: u64) -> Result<Self> {
        Ok(BTreeModel {
            layout: KeyedLayout::new(spec, base, "btree")?,
            nodes: vec![BNode::default()],
            root: 0,
        })
    }

    fn line(&self, i: usize) -> DataLine {
        let node = &self.nodes[i];
        let mut line = DataLine::ZERO;
        line.set_u64(0, node.keys.len() as u64 | (u64::from(node.is_leaf()) << 8) | (0xb7 << 56));
        for (k, key) in node.keys.iter().enumerate() {
            line.set_u64(1 + k, key + 1);
        }
        for (c, &child) in node.children.iter().enumerate() {
            line.set_u64(4 + c, self.layout.node_addr(child).value());
        }
        line
    }

    fn touch(&self, i: usize, txn: &mut TxnBuf<'_>) {
        txn.write(self.layout.node_addr(i), self.line(i));
    }

    fn header_line(&self) -> DataLine {
        let mut line = DataLine::ZERO;
        line.set_u64(0, self.layout.node_addr(self.root).value());
        line.set_u64(1, self.nodes.len() as u64);
        line
    }

    /// Splits the full child `c` of `parent`.
    fn split_child(&mut self, parent: usize, c: usize, txn: &mut TxnBuf<'_>) {
        let child = self.nodes[parent].children[c];
        let mut right = BNode {
            keys: self.nodes[child].keys.split_off(2),
            children: Vec::new(),
        };
        if !self.nodes[child].is_leaf() {
            right.children = self.nodes[child].children.split_off(2);
        }
        let mid = self.nodes[child].keys.pop().expect("full node");
        let r = self.nodes.len();
        self.nodes.push(right);
        self.nodes[parent].keys.insert(c, mid);
        self.nodes[parent].children.insert(c + 1, r);
        for i in [parent, child, r] {
            self.touch(i, txn);
        }
        txn.write(self.layout.header(), self.header_line());
    }
}

impl KeyedModel for BTreeModel {
    fn key_space(&self) -> u64 {
        self.layout.key_space
    }

    fn value_addr(&self, key: u64) -> PhysAddr {
        self.layout.value_addr(key)
    }

    fn insert(&mut self, key: u64, txn: &mut TxnBuf<'_>) {
        txn.read(self.layout.header());
        // Search first so existing keys cost only the descent.
        let mut x = self.root;
        loop {
            txn.read(self.layout.node_addr(x));
            let node = &self.nodes[x];
            if node.keys.contains(&key) {
                return;
            }
            if node.is_leaf() {
                break;
            }
            x = node.children[node.keys.partition_point(|&k| k < key)];
        }
        if self.nodes[self.root].keys.len() == BTREE_MAX_KEYS {
            let s = self.nodes.len();
            self.nodes.push(BNode {
                keys: Vec::new(),
                children: vec![self.root],
            });
            self.root = s;
            self.split_child(s, 0, txn);
        }
        let mut x = self.root;
        loop {
            let i = self.nodes[x].keys.partition_point(|&k| k < key);
            if self.nodes[x].is_leaf() {
                self.nodes[x].keys.insert(i, key);
                self.touch(x, txn);
                return;
            }
            let mut c = i;
            let child = self.nodes[x].children[c];
            txn.read(self.layout.node_addr(child));
            if self.nodes[child].keys.len() == BTREE_MAX_KEYS {
                self.split_child(x, c, txn);
                if key > self.nodes[x].keys[c] {
                    c += 1;
                }
            }
            x = self.nodes[x].children[c];
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct RbNode {
    key: u64,
    left: Option<usize>,
    right: Option<usize>,
    parent: Option<usize>,
    red: bool,
}

/// Red-black tree with parent pointers; one node per 64 B line.
struct RbTreeModel {
    layout: KeyedLayout,
    nodes: Vec<RbNode>,
    root: Option<usize>,
}

impl RbTreeModel {
    fn new(spec: &TxnSpec, base: u64) -> Result<Self> {
        Ok(RbTreeModel {
            layout: KeyedLayout::new(spec, base, "rbtree")?,
            nodes: Vec::new(),
            root: None,
        })
    }

    fn link(&self, n: Option<usize>) -> u64 {
        n.map_or(0, |i| self.layout.node_addr(i).value())
    }

    fn touch(&self, i: usize, txn: &mut TxnBuf<'_>) {
        let n = &self.nodes[i];
        let mut line = DataLine::ZERO;
        line.set_u64(0, n.key + 1);
        line.set_u64(1, self.layout.value_addr(n.key).value());
        line.set_u64(2, self.link(n.left));
        line.set_u64(3, self.link(n.right));
        line.set_u64(4, self.link(n.parent));
        line.set_u64(5, u64::from(n.red));
        txn.write(self.layout.node_addr(i), line);
    }

    fn set_root(&mut self, root: usize, txn: &mut TxnBuf<'_>) {
        self.root = Some(root);
        let mut line = DataLine::ZERO;
        line.set_u64(0, self.layout.node_addr(root).value());
        line.set_u64(1, self.nodes.len() as u64);
        txn.write(self.layout.header(), line);
    }

    fn is_red(&self, n: Option<usize>) -> bool {
        n.is_some_and(|i| self.nodes[i].red)
    }

    fn rotate(&mut self, x: usize, left: bool, txn: &mut TxnBuf<'_>) {
        let y = if left { self.nodes[x].right } else { self.nodes[x].left }.expect("rotation pivot");
        let inner = if left { self.nodes[y].left } else { self.nodes[y].right };
        if left {
            self.nodes[x].right = inner;
            self.nodes[y].left = Some(x);
        } else {
            self.nodes[x].left = inner;
            self.nodes[y].right = Some(x);
        }
        if let Some(b) = inner {
            self.nodes[b].parent = Some(x);
            self.touch(b, txn);
        }
        let p = self.nodes[x].parent;
        self.nodes[y].parent = p;
        match p {
            None => self.set_root(y, txn),
            Some(p) => {
                if self.nodes[p].left == Some(x) {
                    self.nodes[p].left = Some(y);
                } else {
                    self.nodes[p].right = Some(y);
                }
                self.touch(p, txn);
            }
        }
        self.nodes[x].parent = Some(y);
        self.touch(x, txn);
        self.touch(y, txn);
    }

    fn fixup(&mut self, mut z: usize, txn: &mut TxnBuf<'_>) {
        while let Some(p) = self.nodes[z].parent.filter(|&p| self.nodes[p].red) {
            let g = self.nodes[p].parent.expect("red node has a parent");
            let p_is_left = self.nodes[g].left == Some(p);
            let uncle = if p_is_left { self.nodes[g].right } else { self.nodes[g].left };
            if let Some(u) = uncle.filter(|_| self.is_red(uncle)) {
                self.nodes[p].red = false;
                self.nodes[u].red = false;
                self.nodes[g].red = true;
                for i in [p, u, g] {
                    self.touch(i, txn);
                }
                z = g;
                continue;
            }
            let mut p = p;
            let inner = if p_is_left { self.nodes[p].right } else { self.nodes[p].left };
            if inner == Some(z) {
                self.rotate(p, p_is_left, txn);
                z = p;
                p = self.nodes[z].parent.expect("rotated under parent");
            }
            self.nodes[p].red = false;
            self.nodes[g].red = true;
            self.rotate(g, !p_is_left, txn);
            self.touch(p, txn);
            self.touch(g, txn);
        }
        let root = self.root.expect("non-empty");
        if self.nodes[root].red {
            self.nodes[root].red = false;
            self.touch(root, txn);
        }
    }
}

impl KeyedModel for RbTreeModel {
    fn key_space(&self) -> u64 {
        self.layout.key_space
    }

    fn value_addr(&self, key: u64) -> PhysAddr {
        self.layout.value_addr(key)
    }

    fn insert(&mut self, key: u64, txn: &mut TxnBuf<'_>) {
        txn.read(self.layout.header());
        let mut parent = None;
        let mut cur = self.root;
        while let Some(c) = cur {
            txn.read(self.layout.node_addr(c));
            let k = self.nodes[c].key;
            if k == key {
                return;
            }
            parent = Some(c);
            cur = if key < k { self.nodes[c].left } else { self.nodes[c].right };
        }
        let z = self.nodes.len();
        self.nodes.push(RbNode {
            key,
            left: None,
            right: None,
            parent,
            red: true,
        });
        match parent {
            None => self.set_root(z, txn),
            Some(p) => {
                if key < self.nodes[p].key {
                    self.nodes[p].left = Some(z);
                } else {
                    self.nodes[p].right = Some(z);
                }
                self.touch(p, txn);
            }
        }
        self.touch(z, txn);
        self.fixup(z, txn);
    }
}

/// Open-addressing table with linear probing; one bucket per 64 B line.
struct HashModel {
    layout: KeyedLayout,
    buckets: Vec<Option<u64>>,
}

impl HashModel {
    fn new(spec: &TxnSpec, base: u64) -> Result<Self> {
        let layout = KeyedLayout::new(spec, base, "hash")?;
        let buckets = vec![None; layout.struct_lines as usize];
        Ok(HashModel { layout, buckets })
    }

    fn bucket_addr(&self, b: usize) -> PhysAddr {
        PhysAddr(self.layout.struct_base + b as u64 * LINE_BYTES)
    }
}

fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl KeyedModel for HashModel {
    fn key_space(&self) -> u64 {
        self.layout.key_space
    }

    fn value_addr(&self, key: u64) -> PhysAddr {
        self.layout.value_addr(key)
    }

    fn insert(&mut self, key: u64, txn: &mut TxnBuf<'_>) {
        let n = self.buckets.len();
        let mut b = (mix64(key) % n as u64) as usize;
        loop {
            txn.read(self.bucket_addr(b));
            match self.buckets[b] {
                Some(k) if k == key => return,
                Some(_) => b = (b + 1) % n,
                None => break,
            }
        }
        self.buckets[b] = Some(key);
        let mut line = DataLine::ZERO;
        line.set_u64(0, key + 1);
        line.set_u64(1, self.layout.value_addr(key).value());
        txn.write(self.bucket_addr(b), line);
    }
}

/// Round-robin merge of per-core traces, preserving each core's order.
pub fn interleave_cores(traces: &[OpTrace]) -> Result<OpTrace> {
    if traces.is_empty() || traces.len() > 8 {
        return Err(Error::config("cores", "between 1 and 8 per-core traces are required"));
    }
    let ranges: Vec<Option<(u64, u64)>> = traces.iter().map(OpTrace::address_range).collect();
    for i in 0..ranges.len() {
        for j in i + 1..ranges.len() {
            if let (Some((a0, a1)), Some((b0, b1))) = (ranges[i], ranges[j]) {
                if a0 < b1 && b0 < a1 {
                    return Err(Error::OverlappingArenas(i, j));
                }
            }
        }
    }
    let longest = traces.iter().map(OpTrace::len).max().unwrap_or(0);
    let mut ops = Vec::with_capacity(traces.iter().map(OpTrace::len).sum());
    for i in 0..longest {
        for trace in traces {
            if let Some(op) = trace.ops.get(i) {
                ops.push(*op);
            }
        }
    }
    Ok(OpTrace { ops })
}

/// `cores` copies of the workload, one per core, interleaved. The op limit
/// applies to the merged trace.
pub fn multicore_trace(kind: WorkloadKind, spec: &TxnSpec, cores: usize) -> Result<OpTrace> {
    let per_core = TxnSpec {
        op_limit: spec.op_limit.map(|l| l.div_ceil(cores.max(1) as u64)),
        ..spec.clone()
    };
    let traces = (0..cores)
        .map(|c| generate_for_core(kind, &per_core, c))
        .collect::<Result<Vec<_>>>()?;
    let mut merged = interleave_cores(&traces)?;
    if let Some(limit) = spec.op_limit {
        merged.ops.truncate(limit as usize);
    }
    Ok(merged)
}

/// Uniform random reads and writes over `lines_per_core` lines of each
/// core's arena, issued round-robin across cores.
pub fn random_trace(seed: u64, n_ops: usize, cores: usize, lines_per_core: u64) -> OpTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Values::new(seed.rotate_left(32) ^ 0x5eed);
    let ops = (0..n_ops)
        .map(|i| {
            let core = i % cores.max(1);
            let addr = PhysAddr(core as u64 * CORE_ARENA_STRIDE + rng.gen_range(0..lines_per_core) * LINE_BYTES);
            if rng.gen_bool(0.5) {
                Op::write(core, addr, values.line())
            } else {
                Op::read(core, addr)
            }
        })
        .collect();
    OpTrace { ops }
}
