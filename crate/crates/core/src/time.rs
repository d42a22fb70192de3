//! Epoch-second timestamps and half-open validity windows.

use std::fmt;

/// Seconds since the Unix epoch.
pub type Epoch = i64;

/// A half-open validity interval `[not_before, not_after)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Window {
    pub not_before: Epoch,
    pub not_after: Epoch,
}

/// Where an instant falls relative to a [`Window`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeStatus {
    NotYetValid,
    Valid,
    Expired,
}

impl Window {
    /// Returns `None` for an empty or inverted interval.
    pub fn new(not_before: Epoch, not_after: Epoch) -> Option<Self> {
        (not_before < not_after).then_some(Window { not_before, not_after })
    }

    pub fn starting_at(not_before: Epoch, length: i64) -> Option<Self> {
        Window::new(not_before, not_before.checked_add(length)?)
    }

    pub fn contains(&self, t: Epoch) -> bool {
        self.not_before <= t && t < self.not_after
    }

    pub fn status(&self, t: Epoch) -> TimeStatus {
        if t < self.not_before {
            TimeStatus::NotYetValid
        } else if t >= self.not_after {
            TimeStatus::Expired
        } else {
            TimeStatus::Valid
        }
    }

    /// True when `self` lies entirely inside `outer`.
    pub fn within(&self, outer: &Window) -> bool {
        outer.not_before <= self.not_before && self.not_after <= outer.not_after
    }

    pub fn len(&self) -> i64 {
        self.not_after - self.not_before
    }

    /// Only a window built from its public fields can be empty.
    pub fn is_empty(&self) -> bool {
        self.not_after <= self.not_before
    }

    pub fn intersect(&self, other: &Window) -> Option<Window> {
        Window::new(
            self.not_before.max(other.not_before),
            self.not_after.min(other.not_after),
        )
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.not_before, self.not_after)
    }
}

impl fmt::Display for TimeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TimeStatus::NotYetValid => "NOT_YET_VALID",
            TimeStatus::Valid => "VALID",
            TimeStatus::Expired => "EXPIRED",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_open_bounds() {
        let w = Window::new(100, 200).unwrap();
        assert_eq!(w.status(100), TimeStatus::Valid);
        assert_eq!(w.status(199), TimeStatus::Valid);
        assert_eq!(w.status(200), TimeStatus::Expired);
        assert_eq!(w.status(99), TimeStatus::NotYetValid);
    }

    #[test]
    fn empty_window_rejected() {
        assert!(Window::new(5, 5).is_none());
        assert!(Window::new(6, 5).is_none());
    }

    #[test]
    fn nesting() {
        let outer = Window::new(0, 100).unwrap();
        assert!(Window::new(10, 100).unwrap().within(&outer));
        assert!(!Window::new(10, 101).unwrap().within(&outer));
    }
}
