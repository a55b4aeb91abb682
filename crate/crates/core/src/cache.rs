//! Exclusive multi-level set-associative cache hierarchy with LRU replacement.
//!
//! Every physical way in the hierarchy has a global slot index `N`. Private
//! levels are replicated per core; slots are numbered level by level, core
//! instance by core instance, and within an instance as `set * ways + way`.
//! A line lives in exactly one slot at a time.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::line::{DataLine, PhysAddr, LINE_BYTES};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub name: String,
    /// Capacity of one instance in bytes.
    pub capacity: u64,
    pub assoc: usize,
    /// Private levels have one instance per core.
    pub private: bool,
}

impl LevelSpec {
    pub fn new(name: &str, capacity: u64, assoc: usize, private: bool) -> Self {
        LevelSpec {
            name: name.to_string(),
            capacity,
            assoc,
            private,
        }
    }

    pub fn sets(&self) -> usize {
        (self.capacity / (self.assoc as u64 * LINE_BYTES)) as usize
    }

    pub fn lines(&self) -> usize {
        (self.capacity / LINE_BYTES) as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheGeometry {
    pub cores: usize,
    pub levels: Vec<LevelSpec>,
}

impl Default for CacheGeometry {
    /// Eight private 128 KiB 2-way L1d caches, a shared 1 MiB 8-way L2 and a
    /// shared 2 MiB 8-way L3: 4 MiB of data cache, 65,536 lines.
    fn default() -> Self {
        CacheGeometry {
            cores: 8,
            levels: vec![
                LevelSpec::new("L1d", 128 << 10, 2, true),
                LevelSpec::new("L2", 1 << 20, 8, false),
                LevelSpec::new("L3", 2 << 20, 8, false),
            ],
        }
    }
}

impl CacheGeometry {
    /// A single shared level; handy for isolating replacement behaviour.
    pub fn single_level(capacity: u64, assoc: usize) -> Self {
        CacheGeometry {
            cores: 1,
            levels: vec![LevelSpec::new("L1", capacity, assoc, false)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cores == 0 {
            return Err(Error::InvalidGeometry("at least one core is required".into()));
        }
        if self.levels.is_empty() {
            return Err(Error::InvalidGeometry("at least one level is required".into()));
        }
        for level in &self.levels {
            if level.assoc == 0 {
                return Err(Error::InvalidGeometry(format!("{}: zero associativity", level.name)));
            }
            let set_bytes = level.assoc as u64 * LINE_BYTES;
            if level.capacity == 0 || level.capacity % set_bytes != 0 {
                return Err(Error::InvalidGeometry(format!(
                    "{}: capacity {} is not a multiple of assoc x 64 = {}",
                    level.name, level.capacity, set_bytes
                )));
            }
        }
        Ok(())
    }

    pub fn instances(&self, level: usize) -> usize {
        if self.levels[level].private {
            self.cores
        } else {
            1
        }
    }

    /// Bytes held by a level across all of its instances.
    pub fn level_bytes(&self, level: usize) -> u64 {
        self.levels[level].capacity * self.instances(level) as u64
    }

    pub fn total_bytes(&self) -> u64 {
        (0..self.levels.len()).map(|l| self.level_bytes(l)).sum()
    }

    pub fn total_lines(&self) -> usize {
        (self.total_bytes() / LINE_BYTES) as usize
    }

    /// Same organisation with every capacity multiplied by `num / den`.
    pub fn scaled(&self, num: u64, den: u64) -> Self {
        let mut out = self.clone();
        for level in &mut out.levels {
            level.capacity = level.capacity * num / den;
        }
        out
    }
}

/// Set index of `addr` within one instance of `level`.
pub fn slot_index_of(addr: PhysAddr, geom: &CacheGeometry, level: usize) -> Result<usize> {
    let spec = geom.levels.get(level).ok_or(Error::LevelOutOfRange {
        level,
        levels: geom.levels.len(),
    })?;
    if !addr.is_line_aligned() {
        return Err(Error::Misaligned(addr));
    }
    Ok((addr.line_number() % spec.sets() as u64) as usize)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccessKind {
    Read,
    Write,
}

#[derive(Clone, Debug, Default)]
pub struct CacheSlot {
    pub tag: Option<PhysAddr>,
    pub dirty: bool,
    pub content: DataLine,
    last_use: u64,
}

impl CacheSlot {
    pub fn last_use(&self) -> u64 {
        self.last_use
    }
}

/// Where a slot sits in the hierarchy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlotLocation {
    pub level: usize,
    pub core: Option<usize>,
    pub set: usize,
    pub way: usize,
}

/// A line pushed out of the last level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Victim {
    pub slot: usize,
    pub tag: PhysAddr,
    pub content: DataLine,
    pub dirty: bool,
}

/// Where a hit was served from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HitInfo {
    pub level: usize,
    /// Served from another core's private instance.
    pub remote: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccessResult {
    pub hit: Option<HitInfo>,
    pub slot: usize,
    pub victim: Option<Victim>,
}

#[derive(Clone, Copy, Debug)]
struct Instance {
    level: usize,
    core: Option<usize>,
    base: usize,
    sets: usize,
    ways: usize,
}

/// Moves a line's raw content from one slot to another. Schemes that key the
/// stored representation on the slot index re-encode here.
pub type Relocate<'a> = &'a mut dyn FnMut(usize, usize, &mut DataLine);

pub struct Hierarchy {
    geom: CacheGeometry,
    instances: Vec<Instance>,
    level_start: Vec<usize>,
    usable_ways: Vec<usize>,
    slots: Vec<CacheSlot>,
    resident: HashMap<u64, usize>,
    clock: u64,
}

impl Hierarchy {
    pub fn new(geom: CacheGeometry) -> Result<Self> {
        Self::with_reserved_ways(geom, false)
    }

    /// When `reserve_half` is set only the lower half of each set's ways hold
    /// user data; the upper half is left to on-chip pads.
    pub fn with_reserved_ways(geom: CacheGeometry, reserve_half: bool) -> Result<Self> {
        geom.validate()?;
        let mut instances = Vec::new();
        let mut level_start = Vec::new();
        let mut usable_ways = Vec::new();
        let mut base = 0;
        for (level, spec) in geom.levels.iter().enumerate() {
            level_start.push(instances.len());
            let usable = if reserve_half {
                if spec.assoc < 2 || spec.assoc % 2 != 0 {
                    return Err(Error::InvalidGeometry(format!(
                        "{}: reserving half the ways needs an even associativity >= 2",
                        spec.name
                    )));
                }
                spec.assoc / 2
            } else {
                spec.assoc
            };
            usable_ways.push(usable);
            for i in 0..geom.instances(level) {
                instances.push(Instance {
                    level,
                    core: spec.private.then_some(i),
                    base,
                    sets: spec.sets(),
                    ways: spec.assoc,
                });
                base += spec.lines();
            }
        }
        Ok(Hierarchy {
            geom,
            instances,
            level_start,
            usable_ways,
            slots: vec![CacheSlot::default(); base],
            resident: HashMap::new(),
            clock: 0,
        })
    }

    pub fn geometry(&self) -> &CacheGeometry {
        &self.geom
    }

    pub fn total_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn slot(&self, n: usize) -> &CacheSlot {
        &self.slots[n]
    }

    pub fn slots(&self) -> impl Iterator<Item = (usize, &CacheSlot)> {
        self.slots.iter().enumerate()
    }

    pub fn lookup(&self, addr: PhysAddr) -> Option<usize> {
        self.resident.get(&addr.value()).copied()
    }

    fn instance_of(&self, slot: usize) -> &Instance {
        // instances are sorted by base
        let idx = self.instances.partition_point(|inst| inst.base <= slot) - 1;
        &self.instances[idx]
    }

    pub fn locate(&self, slot: usize) -> SlotLocation {
        let inst = self.instance_of(slot);
        let offset = slot - inst.base;
        SlotLocation {
            level: inst.level,
            core: inst.core,
            set: offset / inst.ways,
            way: offset % inst.ways,
        }
    }

    /// Whether the slot may hold user data.
    pub fn is_usable(&self, slot: usize) -> bool {
        let loc = self.locate(slot);
        loc.way < self.usable_ways[loc.level]
    }

    pub fn usable_slots(&self) -> usize {
        (0..self.slots.len()).filter(|&n| self.is_usable(n)).count()
    }

    pub fn touch(&mut self, slot: usize) {
        self.clock += 1;
        self.slots[slot].last_use = self.clock;
    }

    pub fn check_core(&self, core: usize) -> Result<()> {
        if core >= self.geom.cores {
            return Err(Error::CoreOutOfRange {
                core,
                cores: self.geom.cores,
            });
        }
        Ok(())
    }

    fn instance_for(&self, level: usize, core: usize) -> Instance {
        let start = self.level_start[level];
        let inst = self.instances[start];
        if inst.core.is_some() {
            self.instances[start + core]
        } else {
            inst
        }
    }

    /// Picks the way a line for `addr` would occupy at `level`: the first
    /// empty usable way, else the least recently used one.
    fn choose_way(&self, level: usize, core: usize, addr: PhysAddr) -> usize {
        let inst = self.instance_for(level, core);
        let set = (addr.line_number() % inst.sets as u64) as usize;
        let first = inst.base + set * inst.ways;
        let usable = first..first + self.usable_ways[level];
        if let Some(empty) = usable.clone().find(|&n| self.slots[n].tag.is_none()) {
            return empty;
        }
        usable
            .min_by_key(|&n| self.slots[n].last_use)
            .expect("at least one usable way")
    }

    /// Removes the line in `slot`, returning `(tag, content, dirty)`.
    pub fn take(&mut self, slot: usize) -> Option<(PhysAddr, DataLine, bool)> {
        let entry = std::mem::take(&mut self.slots[slot]);
        let tag = entry.tag?;
        self.resident.remove(&tag.value());
        Some((tag, entry.content, entry.dirty))
    }

    /// Installs a line into an empty slot and marks it most recently used.
    pub fn place(&mut self, slot: usize, tag: PhysAddr, content: DataLine, dirty: bool) {
        debug_assert!(self.slots[slot].tag.is_none(), "slot {slot} is occupied");
        self.slots[slot].tag = Some(tag);
        self.slots[slot].content = content;
        self.slots[slot].dirty = dirty;
        self.resident.insert(tag.value(), slot);
        self.touch(slot);
    }

    pub fn set_content(&mut self, slot: usize, content: DataLine) {
        self.slots[slot].content = content;
    }

    pub fn set_dirty(&mut self, slot: usize, dirty: bool) {
        debug_assert!(!dirty || self.slots[slot].tag.is_some());
        self.slots[slot].dirty = dirty;
    }

    /// Frees a slot in the accessing core's first level for `addr`, demoting
    /// the displaced line level by level. Returns the freed slot and whatever
    /// fell out of the last level.
    pub fn make_room(&mut self, core: usize, addr: PhysAddr, relocate: Relocate<'_>) -> (usize, Option<Victim>) {
        let target = self.choose_way(0, core, addr);
        let mut outgoing = self.take(target).map(|(tag, content, dirty)| (target, tag, content, dirty));
        let mut level = 0;
        while let Some((from, tag, mut content, dirty)) = outgoing {
            level += 1;
            if level == self.geom.levels.len() {
                return (
                    target,
                    Some(Victim {
                        slot: from,
                        tag,
                        content,
                        dirty,
                    }),
                );
            }
            let dest = self.choose_way(level, core, tag);
            outgoing = self.take(dest).map(|(t, c, d)| (dest, t, c, d));
            relocate(from, dest, &mut content);
            self.place(dest, tag, content, dirty);
        }
        (target, None)
    }

    /// Brings a resident line into the accessing core's first level.
    pub fn promote(&mut self, core: usize, slot: usize, relocate: Relocate<'_>) -> (usize, Option<Victim>) {
        let loc = self.locate(slot);
        if loc.level == 0 && loc.core.is_none_or(|c| c == core) {
            self.touch(slot);
            return (slot, None);
        }
        let (tag, mut content, dirty) = self.take(slot).expect("promote of an empty slot");
        let (dest, victim) = self.make_room(core, tag, relocate);
        relocate(slot, dest, &mut content);
        self.place(dest, tag, content, dirty);
        (dest, victim)
    }

    pub fn hit_info(&self, core: usize, slot: usize) -> HitInfo {
        let loc = self.locate(slot);
        HitInfo {
            level: loc.level,
            remote: loc.core.is_some_and(|c| c != core),
        }
    }

    /// Plain-content access: the cache stores whatever the caller hands it.
    pub fn access(&mut self, core: usize, addr: PhysAddr, kind: AccessKind, line: Option<DataLine>) -> Result<AccessResult> {
        self.check_core(core)?;
        if !addr.is_line_aligned() {
            return Err(Error::Misaligned(addr));
        }
        let mut identity = |_: usize, _: usize, _: &mut DataLine| {};
        let (hit, slot, victim) = match self.lookup(addr) {
            Some(slot) => {
                let info = self.hit_info(core, slot);
                let (slot, victim) = self.promote(core, slot, &mut identity);
                (Some(info), slot, victim)
            }
            None => {
                let (slot, victim) = self.make_room(core, addr, &mut identity);
                self.place(slot, addr, DataLine::ZERO, false);
                (None, slot, victim)
            }
        };
        if kind == AccessKind::Write {
            self.set_content(slot, line.unwrap_or_default());
            self.set_dirty(slot, true);
        }
        Ok(AccessResult { hit, slot, victim })
    }

    pub fn occupied(&self) -> usize {
        self.resident.len()
    }

    pub fn dirty_count(&self) -> usize {
        self.slots.iter().filter(|s| s.dirty).count()
    }

    /// Dirty bytes per level, summed across instances.
    pub fn dirty_bytes_by_level(&self) -> Vec<u64> {
        let mut out = vec![0; self.geom.levels.len()];
        for inst in &self.instances {
            let dirty = self.slots[inst.base..inst.base + inst.sets * inst.ways]
                .iter()
                .filter(|s| s.dirty)
                .count() as u64;
            out[inst.level] += dirty * LINE_BYTES;
        }
        out
    }

    /// Drops every line (power loss).
    pub fn clear(&mut self) {
        self.slots.iter_mut().for_each(|s| *s = CacheSlot::default());
        self.resident.clear();
    }
}
