//! Hourly series: SSA forecasting, virtual time, and deviation alarms.

mod alarm;
mod clock;
mod ssa;

pub use alarm::{check_alarm, AlarmConfig, AlarmReport};
pub use clock::{build_virtual_clock, VirtualClock};
pub use ssa::{default_window_length, ssa_fit, ssa_forecast, SsaModel, AUTO_RANK_MASS, UNSTABLE_ROOT_MARGIN};
