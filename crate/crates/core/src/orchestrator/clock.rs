use std::time::Instant;

/// Elapsed run time. The wall clock counts real time since start (plus the
/// time already spent before a resume); the simulated clock only moves when
/// the coordinator charges it for completed work.
#[derive(Debug, Clone)]
pub enum RunClock {
    Wall { started: Instant, offset_s: f64 },
    Simulated { elapsed_s: f64 },
}

impl RunClock {
    pub fn wall(offset_s: f64) -> Self {
        RunClock::Wall {
            started: Instant::now(),
            offset_s,
        }
    }

    pub fn simulated(elapsed_s: f64) -> Self {
        RunClock::Simulated { elapsed_s }
    }

    pub fn is_simulated(&self) -> bool {
        matches!(self, RunClock::Simulated { .. })
    }

    pub fn elapsed_s(&self) -> f64 {
        match self {
            RunClock::Wall { started, offset_s } => offset_s + started.elapsed().as_secs_f64(),
            RunClock::Simulated { elapsed_s } => *elapsed_s,
        }
    }

    /// Charges `seconds` of work; a no-op for the wall clock.
    pub fn charge(&mut self, seconds: f64) {
        if let RunClock::Simulated { elapsed_s } = self {
            *elapsed_s += seconds.max(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulated_moves_only_when_charged() {
        let mut c = RunClock::simulated(1.5);
        assert_eq!(c.elapsed_s(), 1.5);
        c.charge(2.0);
        c.charge(-1.0);
        assert_eq!(c.elapsed_s(), 3.5);
        let mut w = RunClock::wall(10.0);
        w.charge(100.0);
        assert!(w.elapsed_s() >= 10.0 && w.elapsed_s() < 20.0);
    }
}
