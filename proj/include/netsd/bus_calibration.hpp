// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace netsd::cal {

// Constants of the signal-path timing/error model, fitted by
// `netsd bench --calibrate` (grid search over the throughput anchor set;
// see the calibration report it writes). Units: microseconds unless noted.

// Host-side fixed cost per transfer command (driver, scheduling).
inline constexpr double kCommandOverheadFixedUs = 482.0;

// Command/response/token handshake cost, clocked at the bus rate
// (cycles; divide by the mode clock in MHz for microseconds).
inline constexpr double kCommandOverheadCycles = 23440.0;

// Extra per-command cost of going through the switch ICs and the
// extension cable instead of a directly seated card.
inline constexpr double kSwitchInsertionUs = 693.5;

// Card-internal programming time per 512-byte block on writes,
// independent of the bus clock.
inline constexpr double kWriteProgramUsPerBlock = 9.1;

// Per-bit error rates at the reference cable length. The 1.8 V mode is
// sensitive to the cable; reads and writes degrade differently.
inline constexpr double kUhsReadBitError48cm = 1.10640545864e-07;
inline constexpr double kUhsWriteBitError48cm = 2.52398559e-06;

// 3.3 V signaling relying on host-side pull-ups only (no explicit
// pull-ups on the far end): small residual error rate.
inline constexpr double kOpen3v3BitError48cm = 5.0e-9;

inline constexpr double kReferenceCableCm = 48.0;

// Multiplier applied when the cable lacks the interleaved-ground layout.
inline constexpr double kCrosstalkUnsafePenalty = 4.0;

} // namespace netsd::cal
