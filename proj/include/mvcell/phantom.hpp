#pragma once

#include <cstdint>
#include <limits>
#include <map>

#include "mvcell/registration.hpp"
#include "mvcell/volume.hpp"

namespace mvcell {

struct PhantomSpec {
    Dim3 dims{64, 64, 64};
    int n_somata = 20;
    double soma_radius_voxels = 1.5;
    double min_separation = 6.0;
    double psf_anisotropy = 3.5; // elongation along the detection axis
    double attenuation_length = std::numeric_limits<double>::infinity(); // voxels
    double background_level = 0.0;
    double noise_sigma = 0.0;
    double saturation_band_width = 0.0; // voxels near the laser entry face
    double clutter_density = 0.0;       // curvilinear structures per 1e6 voxels
    std::uint64_t rng_seed = 0;

    void validate() const;
};

// One synthetic acquisition: ground truth in the 0-degree (world) frame, one
// volume per rotation angle in its own frame, and the exact world->view
// transforms (90-degree steps about the y axis through the volume center plus
// a small seeded perturbation for the non-reference views).
struct PhantomResult {
    MarkerList truth; // world frame
    std::map<int, Volume> views;
    std::map<int, RigidTransform3D> transforms; // world -> view
};

// Somata render per view as prolate Gaussians elongated along the view's
// detection axis (z), dimmed by exp(-depth / attenuation_length) along the
// view's illumination axis (x, entering at x = 0); clutter renders as
// random-walk tubes at 30% soma intensity. Deterministic given rng_seed.
PhantomResult generate_phantom(const PhantomSpec& spec);

// A truth point is visible in a view iff the rendered intensity at its
// transformed position exceeds the threshold. Returned lists hold view-frame
// coordinates; marker names link back to the truth points.
std::map<int, MarkerList> occlusion_split(const PhantomResult& phantom,
                                          double visibility_threshold);

// Writes views as volume directories (view_000 ... view_270), per-view
// landmark CSVs (jittered truth projections for coarse registration), the
// truth CSV and the true transforms file.
void save_phantom(const PhantomResult& phantom, const std::string& dir,
                  int n_landmarks = 15, double landmark_jitter = 0.3);

} // namespace mvcell
