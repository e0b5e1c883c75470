//! The default Wiener-Hammerstein system: `WhSystem::random` under seed 0,
//! frozen so that results do not depend on the random number generator.

use super::wh::WhSystem;

pub const DEFAULT_WH_SEED: u64 = 0;

pub fn default_wh_system() -> WhSystem {
    WhSystem {
        a1: [
            [0.5184026500885268, -0.654509097613593],
            [0.654509097613593, 0.5184026500885268],
        ],
        b1: [0.9804081466884048, 0.19697681565861333],
        k1: [0.39022645114684523, -0.9207189130377083],
        c1: [0.35618015783658113, -0.9344173024743859],
        a2: [
            [-0.5279600682875251, -0.656208313017105],
            [0.656208313017105, -0.5279600682875251],
        ],
        b2: [-0.3232869530101127, -0.9463009806681155],
        k2: [-0.3199425704824271, -0.9474369380560889],
        c2: [-0.9992040854976019, -0.03988979223938353],
        alpha: [0.0, 1.0, 0.5, 0.25],
    }
}
