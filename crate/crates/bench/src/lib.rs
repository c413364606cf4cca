//! Fixtures shared by the criterion benches.

use ocplab::problems::registry;
use ocplab::ProblemSpec;

/// A registered problem by id; panics on unknown ids since benches are fixed.
pub fn problem(id: &str) -> ProblemSpec {
    registry::problem(id).expect("registered problem")
}
