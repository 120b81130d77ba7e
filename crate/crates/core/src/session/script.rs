//! Scripted user input for simulated sessions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PeerRole;

/// One input event in image space. Pixels are anchored against the acting
/// peer's own depth view: the operator's loopback frame or the expert's last
/// reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotationAction {
    /// Starts a stroke; any stroke still open is ended first.
    Begin { u: u32, v: u32, color: [u8; 3] },
    Point { u: u32, v: u32 },
    End,
    /// Erases the `nth` (modulo count) of the actor's own live strokes.
    Erase { nth: usize },
    ClearAll,
    /// A pointing gesture along the camera ray through the pixel.
    Pointer { u: u32, v: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScriptedAction {
    pub at_us: u64,
    pub role: PeerRole,
    pub action: AnnotationAction,
}

impl ScriptedAction {
    /// A seeded random mix of annotation traffic from both roles, sorted by
    /// time. Roughly two thirds of actions extend or open strokes.
    pub fn random_script(seed: u64, count: usize, span_us: u64, width: u16, height: u16) -> Vec<ScriptedAction> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out: Vec<ScriptedAction> = (0..count)
            .map(|_| {
                let role = if rng.gen_bool(0.5) { PeerRole::Expert } else { PeerRole::Operator };
                let u = rng.gen_range(0..u32::from(width));
                let v = rng.gen_range(0..u32::from(height));
                let action = match rng.gen_range(0..100) {
                    0..=19 => AnnotationAction::Begin {
                        u,
                        v,
                        color: rng.gen(),
                    },
                    20..=64 => AnnotationAction::Point { u, v },
                    65..=79 => AnnotationAction::End,
                    80..=87 => AnnotationAction::Erase { nth: rng.gen_range(0..8) },
                    88..=91 => AnnotationAction::ClearAll,
                    _ => AnnotationAction::Pointer { u, v },
                };
                ScriptedAction {
                    at_us: rng.gen_range(0..span_us.max(1)),
                    role,
                    action,
                }
            })
            .collect();
        out.sort_by_key(|a| a.at_us);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_script_is_sorted_and_seeded() {
        let a = ScriptedAction::random_script(5, 200, 1_000_000, 64, 48);
        assert_eq!(a, ScriptedAction::random_script(5, 200, 1_000_000, 64, 48));
        assert!(a.windows(2).all(|w| w[0].at_us <= w[1].at_us));
        assert!(a.iter().any(|s| s.role == PeerRole::Expert) && a.iter().any(|s| s.role == PeerRole::Operator));
    }
}
