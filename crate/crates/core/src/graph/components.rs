//! Dynamic component bookkeeping over dense annotation indices.
//!
//! Merges are union-by-size: the smaller member list is relabelled into the
//! larger slot, so every element is relabelled O(log n) times over any merge
//! sequence. Edge deletions are handled by the caller re-partitioning a single
//! component with [`Components::repartition`].

#[derive(Debug, Clone, Default)]
struct Slot {
    members: Vec<u32>,
    oldest: u32,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Components {
    slot_of: Vec<u32>,
    slots: Vec<Slot>,
    free: Vec<u32>,
}

impl Components {
    /// Adds a new singleton for element `node`, which must equal the current length.
    pub(crate) fn push(&mut self, node: u32) -> u32 {
        debug_assert_eq!(node as usize, self.slot_of.len());
        let slot = self.alloc(vec![node], node);
        self.slot_of.push(slot);
        slot
    }

    fn alloc(&mut self, members: Vec<u32>, oldest: u32) -> u32 {
        let slot = Slot { members, oldest };
        match self.free.pop() {
            Some(id) => {
                self.slots[id as usize] = slot;
                id
            }
            None => {
                self.slots.push(slot);
                (self.slots.len() - 1) as u32
            }
        }
    }

    pub(crate) fn slot(&self, node: u32) -> u32 {
        self.slot_of[node as usize]
    }

    pub(crate) fn same(&self, x: u32, y: u32) -> bool {
        self.slot(x) == self.slot(y)
    }

    pub(crate) fn members(&self, slot: u32) -> &[u32] {
        &self.slots[slot as usize].members
    }

    /// The oldest (smallest-index) member of a slot.
    pub(crate) fn oldest(&self, slot: u32) -> u32 {
        self.slots[slot as usize].oldest
    }

    pub(crate) fn live_slots(&self) -> impl Iterator<Item = u32> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.members.is_empty())
            .map(|(i, _)| i as u32)
    }

    /// Unions the components of `x` and `y`; returns (surviving slot, absorbed slot)
    /// or `None` when they already coincide.
    pub(crate) fn union(&mut self, x: u32, y: u32) -> Option<(u32, u32)> {
        let (sx, sy) = (self.slot(x), self.slot(y));
        if sx == sy {
            return None;
        }
        let (big, small) = if self.slots[sx as usize].members.len() >= self.slots[sy as usize].members.len() {
            (sx, sy)
        } else {
            (sy, sx)
        };
        let moved = std::mem::take(&mut self.slots[small as usize].members);
        for &m in &moved {
            self.slot_of[m as usize] = big;
        }
        let small_oldest = self.slots[small as usize].oldest;
        let target = &mut self.slots[big as usize];
        target.members.extend(moved);
        target.oldest = target.oldest.min(small_oldest);
        self.free.push(small);
        Some((big, small))
    }

    /// Replaces the component in `slot` by the given parts, which must partition
    /// its members. The part holding the old oldest member keeps the slot.
    /// Returns the slots of all parts, the retained slot first.
    pub(crate) fn repartition(&mut self, slot: u32, parts: Vec<Vec<u32>>) -> Vec<u32> {
        let keep_oldest = self.oldest(slot);
        let mut out = Vec::with_capacity(parts.len());
        let mut others = Vec::new();
        for part in parts {
            let oldest = *part.iter().min().expect("empty component part");
            if part.contains(&keep_oldest) {
                self.slots[slot as usize] = Slot { members: part, oldest };
                out.push(slot);
            } else {
                others.push((part, oldest));
            }
        }
        for (part, oldest) in others {
            let members = part.clone();
            let id = self.alloc(part, oldest);
            for m in members {
                self.slot_of[m as usize] = id;
            }
            out.push(id);
        }
        out
    }
}
