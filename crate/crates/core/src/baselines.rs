//! Comparison policies.
//!
//! * ATO offloads when the local classifier's confidence is below a threshold.
//! * RCO offloads whenever its running average power would stay within budget.
//! * OCOS always requests the cloudlet and relies on greedy admission.

use alloc::vec::Vec;

/// Energy spent by a device so far, in watt-slots.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EnergyLedger {
    pub energy: f64,
    pub slots: u64,
}

impl EnergyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Close one slot in which `spent` watt-slots were used.
    pub fn record(&mut self, spent: f64) {
        self.energy += spent;
        self.slots += 1;
    }

    pub fn average_power(&self) -> f64 {
        if self.slots == 0 {
            0.0
        } else {
            self.energy / self.slots as f64
        }
    }
}

/// Offload iff the local confidence is strictly below `threshold`.
pub fn ato_decide(d_local: f64, threshold: f64) -> bool {
    d_local < threshold
}

/// Offload iff spending `cost` this slot keeps the running average within `budget`.
pub fn rco_decide(ledger: &EnergyLedger, cost: f64, budget: f64) -> bool {
    (ledger.energy + cost) / (ledger.slots + 1) as f64 <= budget
}

/// Greedy admission in request order: each request is admitted iff it fits the
/// capacity that remains. Returns the admitted request positions.
pub fn ocos_schedule(requests: &[(usize, f64)], capacity: f64) -> Vec<usize> {
    let mut left = capacity;
    let mut admitted = Vec::new();
    for (i, &(_, h)) in requests.iter().enumerate() {
        if h <= left {
            left -= h;
            admitted.push(i);
        }
    }
    admitted
}
