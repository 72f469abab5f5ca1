//! Builds the Janus beam transform, prints it, and round-trips random body
//! velocities through beam space.
//!
//! Run with `cargo run --example geometry_roundtrip -- [alpha_deg]`.

use dvl_calib::geometry::{project_to_beams, BeamGeometry, Velocity3, VelocitySolver};
use dvl_calib::seed::rng_from_seed;
use rand::Rng;

fn main() -> dvl_calib::Result<()> {
    let alpha = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20.0);
    let geometry = BeamGeometry::from_degrees(alpha)?;
    let h = geometry.transform()?;
    println!("beam transform for a {alpha}° pitch:");
    let m = h.rows();
    for i in 0..4 {
        println!(
            "  beam {}: [{:+.6}, {:+.6}, {:+.6}]",
            i + 1,
            m[(i, 0)],
            m[(i, 1)],
            m[(i, 2)]
        );
    }
    println!("condition number of HᵀH: {:.3}", h.normal_condition());

    let solver = VelocitySolver::new(&h)?;
    let mut rng = rng_from_seed(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let v = Velocity3::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-1.0..1.0),
        );
        let back = solver.solve(project_to_beams(&h, v));
        worst = worst.max((back - v).norm());
    }
    println!("1000 random velocities: worst roundtrip error {worst:.3e} m/s");

    let v = Velocity3::new(1.5, 0.0, 0.0);
    let beams = project_to_beams(&h, v);
    println!("surge 1.5 m/s seen by the beams: {:?}", beams.0);
    Ok(())
}
