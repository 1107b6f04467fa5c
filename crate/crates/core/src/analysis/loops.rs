//! Loop nesting forest that tolerates irreducible control flow.
//!
//! One depth-first traversal tags every block with its innermost loop
//! header. A block reached again while it is still on the DFS path becomes a
//! header. Reaching an already finished block whose header chain leaves the
//! current path means the region has several entries; the chain is retagged
//! so that the region is grouped under the entry visited first.

const NONE: u32 = u32::MAX;

/// Raw loop information over temporary block numbers.
#[derive(Clone, Debug)]
pub(crate) struct LoopTags {
    pub is_header: Vec<bool>,
    pub irreducible: Vec<bool>,
    /// Innermost enclosing loop header (not the block itself), or NONE.
    pub iloop_header: Vec<u32>,
    /// DFS preorder number, NONE for unreachable blocks.
    pub preorder: Vec<u32>,
}

impl LoopTags {
    pub fn header_of(&self, b: u32) -> Option<u32> {
        let h = self.iloop_header[b as usize];
        (h != NONE).then_some(h)
    }
}

struct State {
    dfsp_pos: Vec<u32>,
    iloop: Vec<u32>,
}

impl State {
    fn tag_lhead(&mut self, b: u32, h: u32) {
        if b == h || h == NONE {
            return;
        }
        let (mut cur1, mut cur2) = (b, h);
        while self.iloop[cur1 as usize] != NONE {
            let ih = self.iloop[cur1 as usize];
            if ih == cur2 {
                return;
            }
            if self.dfsp_pos[ih as usize] < self.dfsp_pos[cur2 as usize] {
                self.iloop[cur1 as usize] = cur2;
                cur1 = cur2;
                cur2 = ih;
            } else {
                cur1 = ih;
            }
        }
        self.iloop[cur1 as usize] = cur2;
    }
}

pub(crate) fn find_loops(succs: &[Vec<u32>], entry: u32) -> LoopTags {
    let n = succs.len();
    let mut st = State {
        dfsp_pos: vec![0; n],
        iloop: vec![NONE; n],
    };
    let mut traversed = vec![false; n];
    let mut is_header = vec![false; n];
    let mut irreducible = vec![false; n];
    let mut preorder = vec![NONE; n];
    let mut next_pre = 0;

    let mut stack: Vec<(u32, usize)> = vec![(entry, 0)];
    traversed[entry as usize] = true;
    st.dfsp_pos[entry as usize] = 1;
    preorder[entry as usize] = next_pre;
    next_pre += 1;

    while let Some(&mut (b, ref mut i)) = stack.last_mut() {
        if let Some(&s) = succs[b as usize].get(*i) {
            *i += 1;
            let su = s as usize;
            if !traversed[su] {
                traversed[su] = true;
                preorder[su] = next_pre;
                next_pre += 1;
                st.dfsp_pos[su] = stack.len() as u32 + 1;
                stack.push((s, 0));
            } else if st.dfsp_pos[su] > 0 {
                is_header[su] = true;
                st.tag_lhead(b, s);
            } else if st.iloop[su] != NONE {
                let mut h = st.iloop[su];
                if st.dfsp_pos[h as usize] > 0 {
                    st.tag_lhead(b, h);
                } else {
                    // Re-entry into a finished loop: irreducible.
                    irreducible[h as usize] = true;
                    while st.iloop[h as usize] != NONE {
                        h = st.iloop[h as usize];
                        if st.dfsp_pos[h as usize] > 0 {
                            st.tag_lhead(b, h);
                            break;
                        }
                        irreducible[h as usize] = true;
                    }
                }
            }
        } else {
            stack.pop();
            st.dfsp_pos[b as usize] = 0;
            if let Some(&(parent, _)) = stack.last() {
                let nh = st.iloop[b as usize];
                st.tag_lhead(parent, nh);
            }
        }
    }
    LoopTags {
        is_header,
        irreducible,
        iloop_header: st.iloop,
        preorder,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn natural_loop() {
        // A→B→C→B, B→D
        let succs = vec![vec![1], vec![2, 3], vec![1], vec![]];
        let t = find_loops(&succs, 0);
        assert_eq!(t.is_header, vec![false, true, false, false]);
        assert_eq!(t.header_of(2), Some(1));
        assert_eq!(t.header_of(3), None);
        assert!(!t.irreducible[1]);
    }

    #[test]
    fn irreducible_pair() {
        // A→B, A→C, B→C, C→B, B→D
        let succs = vec![vec![1, 2], vec![2, 3], vec![1], vec![]];
        let t = find_loops(&succs, 0);
        assert!(t.is_header[1]);
        assert_eq!(t.header_of(2), Some(1));
        assert!(t.irreducible[1]);
    }

    #[test]
    fn nested() {
        // 0→1→2→3→2, 3→4→1, 4→5
        let succs = vec![vec![1], vec![2], vec![3], vec![2, 4], vec![1, 5], vec![]];
        let t = find_loops(&succs, 0);
        assert!(t.is_header[1] && t.is_header[2]);
        assert_eq!(t.header_of(2), Some(1));
        assert_eq!(t.header_of(3), Some(2));
        assert_eq!(t.header_of(4), Some(1));
        assert_eq!(t.header_of(5), None);
    }
}
