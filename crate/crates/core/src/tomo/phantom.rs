use super::Image;

/// Ten-ellipse Shepp-Logan table with Toft's contrast-enhanced
/// intensities: `(intensity, semi-axis a, semi-axis b, x0, y0, phi_degrees)`
/// on the square `[-1, 1]^2`.
pub const SHEPP_LOGAN_ELLIPSES: [[f64; 6]; 10] = [
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0],
    [-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0],
    [-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0],
    [0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0],
    [0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0],
    [0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0],
    [0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0],
    [0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0],
    [0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0],
];

/// Shepp-Logan phantom sampled at pixel centres, min-max rescaled to
/// `[0, 1]` and masked to the inscribed circle.
pub fn shepp_logan(n_side: usize) -> Image {
    let n = n_side as f64;
    let ellipses: Vec<_> = SHEPP_LOGAN_ELLIPSES
        .iter()
        .map(|&[v, a, b, x0, y0, phi]| {
            let (sp, cp) = phi.to_radians().sin_cos();
            (v, a * a, b * b, x0, y0, cp, sp)
        })
        .collect();
    let pixels = (0..n_side * n_side)
        .map(|i| {
            let x = ((i % n_side) as f64 + 0.5) * 2.0 / n - 1.0;
            let y = 1.0 - ((i / n_side) as f64 + 0.5) * 2.0 / n;
            ellipses
                .iter()
                .filter(|&&(_, a2, b2, x0, y0, cp, sp)| {
                    let (dx, dy) = (x - x0, y - y0);
                    let u = dx * cp + dy * sp;
                    let v = -dx * sp + dy * cp;
                    u * u / a2 + v * v / b2 <= 1.0
                })
                .map(|e| e.0)
                .sum()
        })
        .collect();
    let mut img = Image::new(n_side, pixels).expect("square grid");
    img.rescale_unit();
    img.mask_to_fov();
    img
}
