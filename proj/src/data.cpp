#include "rdr/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace rdr {

namespace F = torch::nn::functional;

std::string to_string(Domain domain) { return domain == Domain::kSource ? "source" : "target"; }

ImageSample ImageSample::unlabeled_view() const {
  ImageSample s;
  s.image = image;
  s.domain = domain;
  s.id = id;
  return s;
}

// ---------------------------------------------------------------------------
// mask encoding and image I/O

torch::Tensor decode_mask(const torch::Tensor& gray_u8) {
  TORCH_CHECK(gray_u8.dim() == 2, "mask must be a 2-D grayscale image");
  auto g = gray_u8.to(torch::kInt32);
  auto od = (g >= 64).to(torch::kFloat32);
  auto oc = (g >= 192).to(torch::kFloat32);
  return torch::stack({od, oc});
}

torch::Tensor encode_mask(const torch::Tensor& label) {
  TORCH_CHECK(label.dim() == 3 && label.size(0) == 2, "label must be [2,H,W]");
  auto od = label[0] > 0.5;
  auto oc = torch::logical_and(label[1] > 0.5, od);
  auto out = torch::zeros({label.size(1), label.size(2)}, torch::kUInt8);
  out.masked_fill_(od, 128);
  out.masked_fill_(oc, 255);
  return out;
}

torch::Tensor read_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw DataError("cannot read image " + path.string());
  if (!bgr.isContinuous()) bgr = bgr.clone();
  auto t = torch::from_blob(bgr.data, {bgr.rows, bgr.cols, 3}, torch::kUInt8).flip({2});
  return t.permute({2, 0, 1}).to(torch::kFloat32).div_(255.0).contiguous();
}

namespace {

torch::Tensor read_gray(const std::filesystem::path& path) {
  cv::Mat g = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (g.empty()) throw DataError("cannot read mask " + path.string());
  return torch::from_blob(g.data, {g.rows, g.cols}, torch::kUInt8).clone();
}

bool is_image_file(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace

void write_image(const std::filesystem::path& path, const torch::Tensor& image) {
  TORCH_CHECK(image.dim() == 3 && image.size(0) == 3, "image must be [3,H,W]");
  auto hwc = image.detach().to(torch::kCPU).clamp(0.0, 1.0).mul(255.0).round().to(torch::kUInt8).flip({0});
  hwc = hwc.permute({1, 2, 0}).contiguous();
  cv::Mat bgr(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3, hwc.data_ptr());
  if (!cv::imwrite(path.string(), bgr)) throw DataError("cannot write image " + path.string());
}

void write_gray(const std::filesystem::path& path, const torch::Tensor& gray_u8) {
  auto g = gray_u8.detach().to(torch::kCPU).to(torch::kUInt8).contiguous();
  cv::Mat m(static_cast<int>(g.size(0)), static_cast<int>(g.size(1)), CV_8UC1, g.data_ptr());
  if (!cv::imwrite(path.string(), m)) throw DataError("cannot write image " + path.string());
}

// ---------------------------------------------------------------------------
// edge maps

namespace {

torch::Tensor gaussian_kernel(int size, double sigma) {
  auto t = torch::arange(size, torch::kFloat64) - (size - 1) / 2.0;
  auto g = torch::exp(-(t * t) / (2.0 * sigma * sigma));
  g = g / g.sum();
  return torch::outer(g, g);
}

}  // namespace

torch::Tensor make_edge_map(const torch::Tensor& label, const EdgeMapOptions& options) {
  TORCH_CHECK(label.dim() == 3, "label must be [C,H,W]");
  auto y = label.to(torch::kFloat64).unsqueeze(1);  // [C,1,H,W]
  auto sx = torch::tensor({-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0}, torch::kFloat64).view({1, 1, 3, 3});
  auto sy = sx.transpose(2, 3).contiguous();
  auto padded = F::pad(y, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate));
  auto gx = F::conv2d(padded, sx);
  auto gy = F::conv2d(padded, sy);
  auto mag = torch::sqrt(gx * gx + gy * gy).amax(0, /*keepdim=*/true);  // [1,1,H,W]
  const int r = options.kernel / 2;
  auto k = gaussian_kernel(options.kernel, options.sigma).view({1, 1, options.kernel, options.kernel});
  auto blurred = F::conv2d(F::pad(mag, F::PadFuncOptions({r, r, r, r}).mode(torch::kReplicate)), k);
  auto mx = blurred.max().item<double>();
  if (mx > 0) blurred = blurred / mx;
  return blurred.squeeze(0).clamp(0.0, 1.0).to(torch::kFloat32);
}

// ---------------------------------------------------------------------------
// dataset layout

std::vector<ImageSample> load_dataset(const std::filesystem::path& root, Domain domain,
                                      const EdgeMapOptions& edge_options) {
  namespace fs = std::filesystem;
  if (!fs::exists(root)) throw DataError("dataset root does not exist: " + root.string());
  const auto image_dir = root / "images";
  const auto mask_dir = root / "masks";
  std::vector<ImageSample> samples;
  if (!fs::is_directory(image_dir)) return samples;

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(image_dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.stem().string() < b.stem().string(); });

  const bool labeled = fs::is_directory(mask_dir);
  if (labeled) {
    std::vector<std::string> missing;
    for (const auto& f : files) {
      if (!fs::exists(mask_dir / (f.stem().string() + ".png"))) missing.push_back(f.stem().string());
    }
    if (!missing.empty()) {
      std::string list;
      for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
      throw DataError("images without masks in " + root.string() + ": " + list);
    }
  }

  samples.reserve(files.size());
  for (const auto& f : files) {
    ImageSample s;
    s.image = read_image(f);
    s.domain = domain;
    s.id = f.stem().string();
    if (labeled) {
      auto mask = read_gray(mask_dir / (s.id + ".png"));
      if (mask.size(0) != s.height() || mask.size(1) != s.width()) {
        throw DataError("mask size differs from image for " + s.id);
      }
      s.label = decode_mask(mask);
      s.edge = make_edge_map(*s.label, edge_options);
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

void write_dataset(const std::filesystem::path& root, const std::vector<ImageSample>& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(root / "images");
  bool any_labeled = std::any_of(samples.begin(), samples.end(), [](const auto& s) { return s.labeled(); });
  if (any_labeled) fs::create_directories(root / "masks");
  for (const auto& s : samples) {
    write_image(root / "images" / (s.id + ".png"), s.image);
    if (s.labeled()) write_gray(root / "masks" / (s.id + ".png"), encode_mask(*s.label));
  }
}

// ---------------------------------------------------------------------------
// ROI cropping

PixelCoord roi_center(const ImageSample& sample) {
  if (sample.labeled()) {
    auto od = (*sample.label)[0] > 0.5;
    auto idx = torch::nonzero(od).to(torch::kFloat64);
    if (idx.size(0) > 0) {
      auto mean = idx.mean(0);
      return {mean[0].item<double>(), mean[1].item<double>()};
    }
  }
  return {(sample.height() - 1) / 2.0, (sample.width() - 1) / 2.0};
}

namespace {

torch::Tensor crop_replicate(const torch::Tensor& t, int64_t top, int64_t left, int roi) {
  const auto h = t.size(1);
  const auto w = t.size(2);
  auto rows = (torch::arange(roi, torch::kLong) + top).clamp(0, h - 1);
  auto cols = (torch::arange(roi, torch::kLong) + left).clamp(0, w - 1);
  return t.index_select(1, rows).index_select(2, cols);
}

torch::Tensor resize(const torch::Tensor& t, int out, bool nearest) {
  if (t.size(1) == out && t.size(2) == out) return t.clone();
  auto opts = F::InterpolateFuncOptions().size(std::vector<int64_t>{out, out});
  if (nearest) {
    opts.mode(torch::kNearest);
  } else {
    opts.mode(torch::kBilinear).align_corners(false);
  }
  return F::interpolate(t.unsqueeze(0), opts).squeeze(0);
}

}  // namespace

ImageSample crop_roi(const ImageSample& sample, PixelCoord center, int roi, int out) {
  if (roi <= 0 || out <= 0) throw DataError("crop_roi: roi and output size must be positive");
  if (center.row < 0 || center.col < 0 || center.row >= sample.height() || center.col >= sample.width()) {
    throw DataError("crop_roi: center lies outside the image");
  }
  const auto top = static_cast<int64_t>(std::floor(center.row - roi / 2.0 + 0.5));
  const auto left = static_cast<int64_t>(std::floor(center.col - roi / 2.0 + 0.5));
  ImageSample r;
  r.domain = sample.domain;
  r.id = sample.id;
  r.image = resize(crop_replicate(sample.image, top, left, roi), out, false).clamp(0.0, 1.0);
  if (sample.label) {
    auto y = resize(crop_replicate(*sample.label, top, left, roi), out, true);
    y[1].mul_(y[0]);
    r.label = y;
  }
  if (sample.edge) r.edge = resize(crop_replicate(*sample.edge, top, left, roi), out, false).clamp(0.0, 1.0);
  return r;
}

// ---------------------------------------------------------------------------
// augmentation

namespace {

torch::Tensor smooth_field(int64_t h, int64_t w, double sigma, at::Generator& gen) {
  auto noise = torch::rand({1, 1, h, w}, gen, torch::kFloat64) * 2.0 - 1.0;
  int size = std::max(3, static_cast<int>(std::ceil(sigma * 3.0)) * 2 + 1);
  auto k = gaussian_kernel(size, sigma).view({1, 1, size, size});
  int r = size / 2;
  return F::conv2d(F::pad(noise, F::PadFuncOptions({r, r, r, r}).mode(torch::kReflect)), k).view({h, w});
}

torch::Tensor renormalize_edge(const torch::Tensor& e) {
  auto mx = e.max().item<double>();
  return mx > 0 ? (e / mx).clamp(0.0, 1.0) : e.clamp(0.0, 1.0);
}

}  // namespace

ImageSample augment(const ImageSample& sample, std::mt19937_64& rng, const AugmentParams& params) {
  const auto& cfg = params.config;
  const auto& sw = params.switches;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Every coin and parameter is drawn in a fixed order regardless of switches,
  // so the stream position after augment() does not depend on the settings.
  auto draw_coin = [&](bool enabled) {
    const bool heads = unit(rng) < cfg.probability;
    return enabled && (params.force || heads);
  };
  const bool do_scale = draw_coin(sw.scale);
  const double scale = cfg.scale_min + (cfg.scale_max - cfg.scale_min) * unit(rng);
  const bool do_rotate = draw_coin(sw.rotate);
  const double angle_draw = (2.0 * unit(rng) - 1.0) * cfg.max_rotation_deg;
  const bool do_flip = draw_coin(sw.flip);
  const bool do_elastic = draw_coin(sw.elastic);
  const std::uint64_t elastic_seed = rng();
  const bool do_salt = draw_coin(sw.salt_pepper);
  const std::uint64_t salt_seed = rng();
  const bool do_erase = draw_coin(sw.erase);
  const double erase_area = 0.02 + (std::max(cfg.erase_max_fraction, 0.02) - 0.02) * unit(rng);
  const double erase_aspect = std::exp((2.0 * unit(rng) - 1.0) * std::log(2.0));
  const double erase_cy = unit(rng);
  const double erase_cx = unit(rng);
  const double erase_value = unit(rng);
  const bool do_brightness = draw_coin(sw.brightness);
  const double brightness = (2.0 * unit(rng) - 1.0) * cfg.brightness_delta;

  ImageSample out = sample;
  out.image = sample.image.clone();
  if (sample.label) out.label = sample.label->clone();
  if (sample.edge) out.edge = sample.edge->clone();
  const int64_t h = sample.height();
  const int64_t w = sample.width();

  if (do_scale || do_rotate || do_elastic) {
    const double s = do_scale ? scale : 1.0;
    const double theta = (do_rotate ? params.rotation_deg.value_or(angle_draw) : 0.0) * std::numbers::pi / 180.0;
    // Output pixel centres in pixel units relative to the image centre.
    auto ys = (torch::arange(h, torch::kFloat64) + 0.5 - h / 2.0).view({h, 1}).expand({h, w});
    auto xs = (torch::arange(w, torch::kFloat64) + 0.5 - w / 2.0).view({1, w}).expand({h, w});
    const double c = std::cos(theta);
    const double sn = std::sin(theta);
    auto src_x = (c * xs + sn * ys) / s;
    auto src_y = (-sn * xs + c * ys) / s;
    if (do_elastic) {
      at::Generator gen = at::detail::createCPUGenerator(elastic_seed);
      const double size_scale = static_cast<double>(std::max(h, w)) / 256.0;
      const double sigma = std::max(cfg.elastic_sigma * size_scale, 0.5);
      const double alpha = cfg.elastic_alpha * size_scale;
      src_x = src_x + smooth_field(h, w, sigma, gen) * alpha;
      src_y = src_y + smooth_field(h, w, sigma, gen) * alpha;
    }
    // Normalised coordinates for align_corners=false.
    auto gx = (src_x + w / 2.0) / w * 2.0 - 1.0;
    auto gy = (src_y + h / 2.0) / h * 2.0 - 1.0;
    auto grid = torch::stack({gx, gy}, -1).unsqueeze(0);
    auto warp = [&](const torch::Tensor& t, bool nearest, bool border) {
      auto g = grid.to(t.scalar_type());
      auto opts = F::GridSampleFuncOptions().align_corners(false);
      if (nearest) {
        opts.mode(torch::kNearest);
      } else {
        opts.mode(torch::kBilinear);
      }
      if (border) {
        opts.padding_mode(torch::kBorder);
      } else {
        opts.padding_mode(torch::kZeros);
      }
      return F::grid_sample(t.unsqueeze(0), g, opts).squeeze(0);
    };
    out.image = warp(out.image, false, true);
    if (out.label) {
      auto y = warp(*out.label, true, false).round();
      y[1].mul_(y[0]);
      out.label = y;
    }
    if (out.edge) out.edge = renormalize_edge(warp(*out.edge, false, false));
  }

  if (do_flip) {
    out.image = out.image.flip({2});
    if (out.label) out.label = out.label->flip({2});
    if (out.edge) out.edge = out.edge->flip({2});
  }

  if (do_salt) {
    at::Generator gen = at::detail::createCPUGenerator(salt_seed);
    auto u = torch::rand({h, w}, gen, torch::kFloat32);
    auto salt = u < cfg.salt_pepper_fraction / 2.0;
    auto pepper = torch::logical_and(u >= cfg.salt_pepper_fraction / 2.0, u < cfg.salt_pepper_fraction);
    out.image = out.image.masked_fill(salt.unsqueeze(0), 1.0).masked_fill(pepper.unsqueeze(0), 0.0);
  }
  if (do_erase) {
    const double area = erase_area * static_cast<double>(h * w);
    auto eh = std::clamp<int64_t>(static_cast<int64_t>(std::round(std::sqrt(area * erase_aspect))), 1, h);
    auto ew = std::clamp<int64_t>(static_cast<int64_t>(std::round(std::sqrt(area / erase_aspect))), 1, w);
    auto top = static_cast<int64_t>(erase_cy * static_cast<double>(h - eh + 1));
    auto left = static_cast<int64_t>(erase_cx * static_cast<double>(w - ew + 1));
    top = std::min(top, h - eh);
    left = std::min(left, w - ew);
    out.image.index_put_({torch::indexing::Slice(), torch::indexing::Slice(top, top + eh),
                          torch::indexing::Slice(left, left + ew)},
                         erase_value);
  }
  if (do_brightness) out.image = out.image + brightness;
  out.image = out.image.clamp(0.0, 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// synthetic fundus generator

void SyntheticDomainSpec::validate() const {
  if (!(cup_ratio_range.first > 0.0 && cup_ratio_range.second < 1.0 && cup_ratio_range.first <= cup_ratio_range.second)) {
    throw DataError("cup_ratio_range must lie inside (0,1)");
  }
  if (!(contrast > 0)) throw DataError("contrast must be positive");
  if (disc_radius_range.first <= 0 || disc_radius_range.first > disc_radius_range.second) {
    throw DataError("disc_radius_range must be positive and ordered");
  }
  if (image_size < 16) throw DataError("synthetic image_size must be >= 16");
  if (noise_sigma < 0 || vessel_density < 0 || blur < 0) throw DataError("noise, vessel density and blur must be >= 0");
}

namespace {

struct Canvas {
  int size;
  std::vector<float> rgb;  // HWC
  explicit Canvas(int s) : size(s), rgb(static_cast<size_t>(s) * s * 3, 0.0f) {}
  float& at(int r, int c, int ch) { return rgb[(static_cast<size_t>(r) * size + c) * 3 + ch]; }
};

// Value noise: coarse random lattice, bilinearly interpolated.
std::vector<float> value_noise(int size, int cells, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> lattice(static_cast<size_t>(cells + 1) * (cells + 1));
  for (auto& v : lattice) v = u(rng);
  std::vector<float> out(static_cast<size_t>(size) * size);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const float fy = static_cast<float>(r) / size * cells;
      const float fx = static_cast<float>(c) / size * cells;
      const int iy = static_cast<int>(fy);
      const int ix = static_cast<int>(fx);
      const float ty = fy - iy;
      const float tx = fx - ix;
      auto L = [&](int y, int x) { return lattice[static_cast<size_t>(y) * (cells + 1) + x]; };
      const float top = L(iy, ix) * (1 - tx) + L(iy, ix + 1) * tx;
      const float bot = L(iy + 1, ix) * (1 - tx) + L(iy + 1, ix + 1) * tx;
      out[static_cast<size_t>(r) * size + c] = top * (1 - ty) + bot * ty;
    }
  }
  return out;
}

float smoothstep(float edge0, float edge1, float x) {
  const float t = std::clamp((x - edge0) / (edge1 - edge0), 0.0f, 1.0f);
  return t * t * (3 - 2 * t);
}

}  // namespace

ImageSample render_synthetic(const SyntheticDomainSpec& spec, std::mt19937_64& rng, Domain domain,
                             const std::string& id, const EdgeMapOptions& edge_options) {
  spec.validate();
  const int S = spec.image_size;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double a, double b) { return a + (b - a) * unit(rng); };
  std::normal_distribution<float> gauss(0.0f, 1.0f);

  const double cy = S / 2.0 + uniform(-S / 16.0, S / 16.0);
  const double cx = S / 2.0 + uniform(-S / 16.0, S / 16.0);
  const double disc_ry = uniform(spec.disc_radius_range.first, spec.disc_radius_range.second);
  const double disc_rx = disc_ry * uniform(0.85, 0.95);
  const double ratio = uniform(spec.cup_ratio_range.first, spec.cup_ratio_range.second);
  const double cup_ry = ratio * disc_ry;
  const double cup_rx = std::min(ratio * disc_rx * uniform(0.9, 1.1), 0.95 * disc_rx);

  auto texture = value_noise(S, 6, rng);
  auto fine = value_noise(S, 16, rng);
  Canvas canvas(S);
  const float base[3] = {0.46f, 0.22f, 0.10f};
  const float disc_color[3] = {0.68f, 0.48f, 0.30f};
  const float cup_color[3] = {0.76f, 0.66f, 0.48f};
  auto od = torch::zeros({S, S}, torch::kFloat32);
  auto oc = torch::zeros({S, S}, torch::kFloat32);
  auto od_a = od.accessor<float, 2>();
  auto oc_a = oc.accessor<float, 2>();
  const float soft_disc = 1.5f / static_cast<float>(disc_ry);
  const float soft_cup = 3.0f / static_cast<float>(cup_ry);
  for (int r = 0; r < S; ++r) {
    for (int c = 0; c < S; ++c) {
      const double dy = r - cy;
      const double dx = c - cx;
      const float rd = static_cast<float>(std::sqrt((dy / disc_ry) * (dy / disc_ry) + (dx / disc_rx) * (dx / disc_rx)));
      const float rc = static_cast<float>(std::sqrt((dy / cup_ry) * (dy / cup_ry) + (dx / cup_rx) * (dx / cup_rx)));
      const float rr = static_cast<float>(std::sqrt(dy * dy + dx * dx) / S);
      const float vignette = 1.0f - 0.35f * rr * rr;
      const float tex = 0.05f * texture[static_cast<size_t>(r) * S + c] + 0.02f * fine[static_cast<size_t>(r) * S + c];
      const float disc_w = 1.0f - smoothstep(1.0f - soft_disc, 1.0f + soft_disc, rd);
      const float cup_w = 1.0f - smoothstep(1.0f - soft_cup, 1.0f + soft_cup, rc);
      for (int ch = 0; ch < 3; ++ch) {
        float v = base[ch] * vignette + tex;
        v = v * (1 - disc_w) + disc_color[ch] * disc_w;
        v = v * (1 - cup_w) + cup_color[ch] * cup_w;
        canvas.at(r, c, ch) = v;
      }
      const bool in_disc = rd <= 1.0f;
      od_a[r][c] = in_disc ? 1.0f : 0.0f;
      oc_a[r][c] = (in_disc && rc <= 1.0f) ? 1.0f : 0.0f;
    }
  }

  // Vessels: smooth random walks from the disc centre outwards, darker red.
  std::poisson_distribution<int> n_vessels(6.0 * spec.vessel_density);
  const int vessels = spec.vessel_density > 0 ? n_vessels(rng) : 0;
  for (int v = 0; v < vessels; ++v) {
    double angle = uniform(0.0, 2.0 * std::numbers::pi);
    double py = cy;
    double px = cx;
    const double width = uniform(0.6, 1.4) * S / 64.0;
    const double curl = uniform(-0.08, 0.08);
    const int steps = 2 * S;
    for (int t = 0; t < steps; ++t) {
      angle += curl + 0.05 * gauss(rng);
      py += 0.5 * std::sin(angle);
      px += 0.5 * std::cos(angle);
      if (py < -2 || px < -2 || py > S + 2 || px > S + 2) break;
      const int r0 = static_cast<int>(std::floor(py - width - 1));
      const int c0 = static_cast<int>(std::floor(px - width - 1));
      for (int r = std::max(r0, 0); r <= std::min(r0 + static_cast<int>(2 * width) + 3, S - 1); ++r) {
        for (int c = std::max(c0, 0); c <= std::min(c0 + static_cast<int>(2 * width) + 3, S - 1); ++c) {
          const double d = std::sqrt((r - py) * (r - py) + (c - px) * (c - px));
          if (d <= width) {
            canvas.at(r, c, 0) *= 0.985f;
            canvas.at(r, c, 1) *= 0.97f;
            canvas.at(r, c, 2) *= 0.97f;
          }
        }
      }
    }
  }

  auto img = torch::from_blob(canvas.rgb.data(), {S, S, 3}, torch::kFloat32).clone().permute({2, 0, 1}).contiguous();
  if (spec.blur > 0) {
    const int size = std::max(3, static_cast<int>(std::ceil(spec.blur * 3.0)) * 2 + 1);
    auto k = gaussian_kernel(size, spec.blur).to(torch::kFloat32).view({1, 1, size, size}).repeat({3, 1, 1, 1});
    const int r = size / 2;
    img = F::conv2d(F::pad(img.unsqueeze(0), F::PadFuncOptions({r, r, r, r}).mode(torch::kReplicate)), k,
                    F::Conv2dFuncOptions().groups(3))
              .squeeze(0);
  }
  // Domain appearance: contrast about mid-grey, brightness, per-channel tone, sensor noise.
  auto tone = torch::tensor({static_cast<float>(spec.tone_shift[0]), static_cast<float>(spec.tone_shift[1]),
                             static_cast<float>(spec.tone_shift[2])})
                  .view({3, 1, 1});
  img = (img - 0.5f) * static_cast<float>(spec.contrast) + 0.5f + static_cast<float>(spec.brightness) + tone;
  if (spec.noise_sigma > 0) {
    at::Generator gen = at::detail::createCPUGenerator(rng());
    img = img + torch::randn({3, S, S}, gen, torch::kFloat32) * static_cast<float>(spec.noise_sigma);
  }

  ImageSample s;
  s.image = img.clamp(0.0, 1.0);
  s.label = torch::stack({od, oc});
  s.edge = make_edge_map(*s.label, edge_options);
  s.domain = domain;
  s.id = id;
  return s;
}

SyntheticPair generate_synthetic_pair(const SyntheticDomainSpec& source_spec, const SyntheticDomainSpec& target_spec,
                                      int n, std::mt19937_64& rng, const EdgeMapOptions& edge_options) {
  if (n < 1) throw DataError("generate_synthetic_pair: n must be >= 1");
  source_spec.validate();
  target_spec.validate();
  SyntheticPair pair;
  pair.source.reserve(n);
  pair.target.reserve(n);
  auto src_rng = std::mt19937_64(rng());
  auto tgt_rng = std::mt19937_64(rng());
  char buf[32];
  for (int i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof(buf), "src_%05d", i);
    pair.source.push_back(render_synthetic(source_spec, src_rng, Domain::kSource, buf, edge_options));
  }
  for (int i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof(buf), "tgt_%05d", i);
    pair.target.push_back(render_synthetic(target_spec, tgt_rng, Domain::kTarget, buf, edge_options));
  }
  return pair;
}

std::pair<SyntheticDomainSpec, SyntheticDomainSpec> default_domain_specs(int image_size) {
  const double k = image_size / 64.0;
  SyntheticDomainSpec source;
  source.image_size = image_size;
  source.disc_radius_range = {11.0 * k, 16.0 * k};
  SyntheticDomainSpec target = source;
  target.tone_shift = {0.10, -0.06, 0.08};
  target.contrast = 0.6;
  target.brightness = 0.08;
  target.noise_sigma = 0.04;
  return {source, target};
}

SyntheticSplits synthetic_splits(int image_size, int n_train, int n_eval, std::uint64_t data_seed,
                                 const EdgeMapOptions& edge_options) {
  const auto [spec_s, spec_t] = default_domain_specs(image_size);
  const RngHandle rng(data_seed);
  SyntheticSplits out;
  auto train_rng = rng.stream("synthetic", {0});
  auto train = generate_synthetic_pair(spec_s, spec_t, n_train, train_rng, edge_options);
  out.source = std::move(train.source);
  out.target_train = std::move(train.target);
  if (n_eval > 0) {
    auto eval_rng = rng.stream("synthetic", {1});
    auto held = generate_synthetic_pair(spec_s, spec_t, n_eval, eval_rng, edge_options);
    char buf[32];
    for (size_t i = 0; i < held.target.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "tgt_eval_%05zu", i);
      held.target[i].id = buf;
    }
    out.target_eval = std::move(held.target);
  }
  return out;
}

Batch stack_batch(const std::vector<ImageSample>& samples) {
  TORCH_CHECK(!samples.empty(), "stack_batch: empty batch");
  std::vector<torch::Tensor> images;
  std::vector<torch::Tensor> labels;
  std::vector<torch::Tensor> edges;
  for (const auto& s : samples) {
    images.push_back(s.image);
    if (s.label) labels.push_back(*s.label);
    if (s.edge) edges.push_back(*s.edge);
  }
  Batch b;
  b.images = torch::stack(images);
  if (labels.size() == samples.size()) b.labels = torch::stack(labels);
  if (edges.size() == samples.size()) b.edges = torch::stack(edges);
  return b;
}

}  // namespace rdr
