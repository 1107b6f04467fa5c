//! Sequentializing parallel copies (φ moves, call arguments).

use crate::visa::Reg;

/// A storage location: a register or the frame slot at `fp - offset`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Loc {
    Reg(Reg),
    Stack(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Src {
    Loc(Loc),
    Const(u64),
    /// The address `fp - offset`.
    FrameAddr(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Move {
    pub dst: Loc,
    pub src: Src,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NeedsTemp;

/// Orders `moves`, which must have distinct destinations and read all
/// sources before writing any destination, into an equivalent sequence of
/// plain moves. Cycles are broken by saving one destination into `temp`,
/// which must not appear in `moves`.
pub fn sequentialize(moves: &[Move], temp: Option<Reg>) -> Result<Vec<Move>, NeedsTemp> {
    debug_assert!(
        moves
            .iter()
            .enumerate()
            .all(|(i, m)| moves[..i].iter().all(|o| o.dst != m.dst)),
        "parallel move with duplicate destinations"
    );
    let mut pending: Vec<Move> = moves
        .iter()
        .copied()
        .filter(|m| m.src != Src::Loc(m.dst))
        .collect();
    let mut out = Vec::with_capacity(pending.len() + 1);
    while !pending.is_empty() {
        let ready = pending
            .iter()
            .position(|m| !pending.iter().any(|o| o.src == Src::Loc(m.dst)));
        match ready {
            Some(i) => out.push(pending.remove(i)),
            None => {
                // Every remaining destination is still read: only cycles are
                // left. Free the first destination by copying it aside.
                let t = Loc::Reg(temp.ok_or(NeedsTemp)?);
                let d = pending[0].dst;
                out.push(Move {
                    dst: t,
                    src: Src::Loc(d),
                });
                for m in &mut pending {
                    if m.src == Src::Loc(d) {
                        m.src = Src::Loc(t);
                    }
                }
            }
        }
    }
    Ok(out)
}
