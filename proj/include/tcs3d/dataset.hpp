#pragma once

// Synthetic long-tail multi-label clip generator, frame augmentation ops, and
// annotation/manifest file IO. Clips contain 1-5 moving rectangular
// "students"; each carries a set of behavior classes whose identity is
// encoded in the region's spatio-temporal texture (per-class channel
// signature, spatial grating frequency, temporal oscillation) so a learner
// can separate them. Class labels are drawn from a categorical distribution
// whose default head share (classes A+B) is 0.61.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tcs3d/box.hpp"
#include "tcs3d/metrics.hpp"
#include "tcs3d/rng.hpp"
#include "tcs3d/serialization.hpp"
#include "tcs3d/tensor.hpp"

namespace tcs3d {

inline constexpr int kNumClasses = 8;

struct ClassInfo {
  char code;
  const char* name;
};

// letter codes A..H in class-id order
inline constexpr std::array<ClassInfo, kNumClasses> kClassTable{{{'A', "sitting"},
                                                                 {'B', "using the phone"},
                                                                 {'C', "reading/writing"},
                                                                 {'D', "standing/walking"},
                                                                 {'E', "turning head/body"},
                                                                 {'F', "raising-hand"},
                                                                 {'G', "leaning on the desk"},
                                                                 {'H', "talking"}}};

struct DatasetSpec {
  std::size_t num_clips = 60;
  std::size_t t_raw = 32;  // frames per clip
  std::size_t height = 16;
  std::size_t width = 16;
  std::array<double, kNumClasses> class_probs{0.40, 0.21, 0.12, 0.08, 0.07, 0.05, 0.04, 0.03};
  std::size_t min_students = 1, max_students = 5;
  double second_label_prob = 0.35;  // chance a student carries a second class
  std::size_t augment_variants = 0;  // extra augmented copies per base clip
  std::uint64_t seed = 0;
  std::array<std::size_t, 3> split_ratio{4, 1, 1};  // train : test : val
};

inline void check_dataset_spec(const DatasetSpec& spec) {
  check(spec.num_clips >= 1, "DatasetSpec: num_clips must be >= 1");
  check(spec.t_raw >= 1 && spec.height >= 2 && spec.width >= 2,
        "DatasetSpec: clip shape too small");
  double sum = 0.0;
  for (double p : spec.class_probs) {
    check(p >= 0.0, "DatasetSpec: class_probs must be non-negative");
    sum += p;
  }
  check(std::abs(sum - 1.0) <= 1e-9, "DatasetSpec: class_probs must sum to 1, got " +
                                         format_double(sum));
  check(spec.min_students >= 1 && spec.min_students <= spec.max_students,
        "DatasetSpec: student count range invalid");
  check(spec.second_label_prob >= 0.0 && spec.second_label_prob <= 1.0,
        "DatasetSpec: second_label_prob must lie in [0,1]");
  check(spec.split_ratio[0] + spec.split_ratio[1] + spec.split_ratio[2] >= 1,
        "DatasetSpec: split_ratio must not be all zero");
}

// ---------------------------------------------------------------------------
// layout (labels, boxes, trajectories) — cheap, no pixel rendering
// ---------------------------------------------------------------------------

struct StudentTrack {
  Box box0;               // box at frame 0
  double vx = 0.0, vy = 0.0;  // per-frame drift, normalized units
  double phase = 0.0;
  std::vector<int> classes;  // distinct class ids

  Box box_at(std::size_t frame) const {
    const double dx = vx * static_cast<double>(frame);
    const double dy = vy * static_cast<double>(frame);
    return Box{box0.x1 + dx, box0.y1 + dy, box0.x2 + dx, box0.y2 + dy};
  }
};

struct ClipLayout {
  std::int64_t clip_id = 0;
  std::vector<StudentTrack> students;
  std::uint64_t render_seed = 0;
  std::vector<int> augment_ops;      // empty for base clips (AugmentOp values)
  std::uint64_t augment_seed = 0;
};

struct DatasetLayout {
  DatasetSpec spec;
  std::vector<ClipLayout> clips;
  std::vector<int> splits;  // 0 train, 1 test, 2 val
};

namespace detail_dataset {

inline int split_of(std::size_t index, const std::array<std::size_t, 3>& ratio) {
  const std::size_t block = ratio[0] + ratio[1] + ratio[2];
  const std::size_t r = index % block;
  if (r < ratio[0]) return 0;
  if (r < ratio[0] + ratio[1]) return 1;
  return 2;
}

// Draws the clip's students and their label sets. Labels are i.i.d.
// categorical draws; a duplicate second label is handed to a later student
// (or any student lacking that class) instead of being redrawn, which keeps
// the emitted class frequencies matching class_probs.
inline std::vector<StudentTrack> draw_students(const DatasetSpec& spec, Rng& rng) {
  const std::size_t count =
      spec.min_students + rng.index(spec.max_students - spec.min_students + 1);
  std::vector<StudentTrack> students(count);

  std::vector<int> spillover;
  for (StudentTrack& s : students) {
    int first;
    if (!spillover.empty()) {
      first = spillover.back();
      spillover.pop_back();
    } else {
      first = static_cast<int>(rng.categorical(spec.class_probs));
    }
    s.classes.push_back(first);
    if (rng.bernoulli(spec.second_label_prob)) {
      const int second = static_cast<int>(rng.categorical(spec.class_probs));
      if (second != first)
        s.classes.push_back(second);
      else
        spillover.push_back(second);
    }
  }
  for (int label : spillover) {
    for (StudentTrack& s : students) {
      if (std::find(s.classes.begin(), s.classes.end(), label) == s.classes.end()) {
        s.classes.push_back(label);
        break;
      }
    }
    // every student already carries the class: the label is dropped
  }

  for (StudentTrack& s : students) {
    const double bw = rng.uniform(0.25, 0.45);
    const double bh = rng.uniform(0.30, 0.50);
    const double drift = 0.08;
    const double cx = rng.uniform(0.01 + drift + bw / 2, 0.99 - drift - bw / 2);
    const double cy = rng.uniform(0.01 + drift + bh / 2, 0.99 - drift - bh / 2);
    s.box0 = Box{cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2};
    const double t = std::max<std::size_t>(spec.t_raw - 1, 1);
    s.vx = rng.uniform(-drift, drift) / static_cast<double>(t);
    s.vy = rng.uniform(-drift, drift) / static_cast<double>(t);
    s.phase = rng.uniform(0.0, 6.283185307179586);
  }
  return students;
}

}  // namespace detail_dataset

inline DatasetLayout generate_layout(const DatasetSpec& spec) {
  check_dataset_spec(spec);
  DatasetLayout layout;
  layout.spec = spec;
  for (std::size_t i = 0; i < spec.num_clips; ++i) {
    Rng rng(mix_seed(spec.seed, i));
    ClipLayout clip;
    clip.clip_id = static_cast<std::int64_t>(i);
    clip.render_seed = mix_seed(spec.seed, 0x100000 + i);
    clip.students = detail_dataset::draw_students(spec, rng);
    layout.clips.push_back(std::move(clip));
    layout.splits.push_back(detail_dataset::split_of(i, spec.split_ratio));
  }
  return layout;
}

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

namespace detail_dataset {

// per-class texture signature
struct ClassSignature {
  std::array<double, 3> color;
  double spatial_freq;
  double temporal_freq;
};

inline ClassSignature class_signature(int class_id) {
  ClassSignature sig;
  for (int ch = 0; ch < 3; ++ch)
    sig.color[ch] = ((class_id >> ch) & 1) ? 0.95 : 0.30;
  sig.spatial_freq = 1.0 + static_cast<double>(class_id);
  sig.temporal_freq = 1.0 + static_cast<double>(class_id % 4);
  return sig;
}

}  // namespace detail_dataset

// Renders a clip's frames (1, 3, T, H, W). Students are painted in order, so
// later students occlude earlier ones where boxes overlap.
inline Tensor render_clip(const ClipLayout& clip, const DatasetSpec& spec) {
  const Shape5 shape{1, 3, spec.t_raw, spec.height, spec.width};
  std::vector<double> v(numel(shape));
  Rng rng(clip.render_seed);
  const double tau = 6.283185307179586;

  // background
  for (double& x : v) x = 0.10 + 0.06 * rng.uniform();

  for (std::size_t t = 0; t < spec.t_raw; ++t) {
    for (const StudentTrack& s : clip.students) {
      const Box b = s.box_at(t);
      const auto x0 = static_cast<std::size_t>(std::llround(b.x1 * spec.width));
      const auto x1 = static_cast<std::size_t>(std::llround(b.x2 * spec.width));
      const auto y0 = static_cast<std::size_t>(std::llround(b.y1 * spec.height));
      const auto y1 = static_cast<std::size_t>(std::llround(b.y2 * spec.height));
      const double tt = static_cast<double>(t) / static_cast<double>(spec.t_raw);
      for (std::size_t y = y0; y < std::min<std::size_t>(y1, spec.height); ++y)
        for (std::size_t x = x0; x < std::min<std::size_t>(x1, spec.width); ++x) {
          const double u = (static_cast<double>(x) + 0.5) / spec.width;
          const double w = (static_cast<double>(y) + 0.5) / spec.height;
          std::array<double, 3> acc{0.0, 0.0, 0.0};
          for (int c : s.classes) {
            const auto sig = detail_dataset::class_signature(c);
            const double grating =
                0.55 + 0.45 * std::cos(tau * sig.spatial_freq * (u + w) + s.phase);
            const double pulse =
                0.70 + 0.30 * std::sin(tau * sig.temporal_freq * tt + s.phase);
            for (int ch = 0; ch < 3; ++ch) acc[ch] += sig.color[ch] * grating * pulse;
          }
          for (int ch = 0; ch < 3; ++ch) {
            const double paint = 0.15 + 0.85 * acc[ch] / static_cast<double>(s.classes.size());
            v[flat_index(shape, 0, ch, t, y, x)] = std::clamp(paint, 0.0, 1.0);
          }
        }
    }
  }
  // sensor noise
  for (double& x : v) x = std::clamp(x + 0.02 * rng.normal(), 0.0, 1.0);
  return Tensor::from_values(shape, std::move(v));
}

// ---------------------------------------------------------------------------
// frame-rate cropping
// ---------------------------------------------------------------------------

// Uniform stride subsampling of a clip from fps_in to fps_out (default 4):
// output frame k maps to input frame floor(k * fps_in / fps_out).
inline Tensor frame_rate_crop(const Tensor& clip, std::size_t fps_in, std::size_t fps_out = 4) {
  check(fps_out >= 1, "frame_rate_crop: fps_out must be >= 1");
  check(fps_in >= fps_out, "frame_rate_crop: fps_out exceeds fps_in");
  const Shape5& s = clip.shape();
  const std::size_t t_out = (s[2] * fps_out + fps_in - 1) / fps_in;
  const Shape5 os{s[0], s[1], t_out, s[3], s[4]};
  std::vector<double> out(numel(os));
  const auto cv = clip.values();
  for (std::size_t n = 0; n < s[0]; ++n)
    for (std::size_t c = 0; c < s[1]; ++c)
      for (std::size_t k = 0; k < t_out; ++k) {
        const std::size_t src = k * fps_in / fps_out;
        for (std::size_t h = 0; h < s[3]; ++h)
          for (std::size_t w = 0; w < s[4]; ++w)
            out[flat_index(os, n, c, k, h, w)] = cv[flat_index(s, n, c, src, h, w)];
      }
  return Tensor::from_values(os, std::move(out));
}

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

enum class AugmentOp { SaltPepper = 0, GaussianNoise, HistEqualize, LaplacianSharpen, GammaTransform };

inline AugmentOp parse_augment_op(const std::string& name) {
  if (name == "salt_pepper") return AugmentOp::SaltPepper;
  if (name == "gaussian_noise") return AugmentOp::GaussianNoise;
  if (name == "hist_equalize") return AugmentOp::HistEqualize;
  if (name == "laplacian_sharpen") return AugmentOp::LaplacianSharpen;
  if (name == "gamma_transform") return AugmentOp::GammaTransform;
  fail("unknown augmentation op name: '" + name + "'");
}

inline std::string augment_op_name(AugmentOp op) {
  switch (op) {
    case AugmentOp::SaltPepper: return "salt_pepper";
    case AugmentOp::GaussianNoise: return "gaussian_noise";
    case AugmentOp::HistEqualize: return "hist_equalize";
    case AugmentOp::LaplacianSharpen: return "laplacian_sharpen";
    case AugmentOp::GammaTransform: return "gamma_transform";
  }
  fail("invalid augmentation op");
}

// The five ops operate in place on one frame stored as (C, H, W), values in
// [0,1]; every op clamps back into [0,1].

inline void salt_pepper_noise(std::vector<double>& frame, std::size_t channels, std::size_t height,
                              std::size_t width, double rate, Rng& rng) {
  check(rate >= 0.0 && rate <= 1.0, "salt_pepper_noise: rate must lie in [0,1]");
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      if (rate == 0.0 || !rng.bernoulli(rate)) continue;
      const double v = rng.bernoulli(0.5) ? 1.0 : 0.0;
      for (std::size_t c = 0; c < channels; ++c) frame[(c * height + y) * width + x] = v;
    }
}

inline void gaussian_noise(std::vector<double>& frame, double sigma, Rng& rng) {
  for (double& v : frame) v = std::clamp(v + sigma * rng.normal(), 0.0, 1.0);
}

// Classic 256-bin equalization per channel: out = (cdf - cdf_min) / (1 - cdf_min).
// An image whose histogram is already uniform maps to itself up to the bin
// quantization.
inline void hist_equalize(std::vector<double>& frame, std::size_t channels, std::size_t height,
                          std::size_t width) {
  const std::size_t pixels = height * width;
  check(pixels > 0, "hist_equalize: empty frame");
  for (std::size_t c = 0; c < channels; ++c) {
    double* ch = frame.data() + c * pixels;
    std::array<std::size_t, 256> hist{};
    auto bin_of = [](double v) {
      const int b = static_cast<int>(v * 255.0 + 0.5);
      return static_cast<std::size_t>(std::clamp(b, 0, 255));
    };
    for (std::size_t i = 0; i < pixels; ++i) ++hist[bin_of(ch[i])];
    std::array<double, 256> cdf{};
    double acc = 0.0;
    for (std::size_t b = 0; b < 256; ++b) {
      acc += static_cast<double>(hist[b]) / static_cast<double>(pixels);
      cdf[b] = acc;
    }
    double cdf_min = 0.0;
    for (std::size_t b = 0; b < 256; ++b)
      if (hist[b] > 0) {
        cdf_min = cdf[b];
        break;
      }
    const double denom = 1.0 - cdf_min;
    for (std::size_t i = 0; i < pixels; ++i) {
      const double mapped = denom <= 0.0 ? ch[i] : (cdf[bin_of(ch[i])] - cdf_min) / denom;
      ch[i] = std::clamp(mapped, 0.0, 1.0);
    }
  }
}

// Sharpening: out = in + strength * (4*in - N - S - E - W), replicate borders.
inline void laplacian_sharpen(std::vector<double>& frame, std::size_t channels,
                              std::size_t height, std::size_t width, double strength) {
  const std::size_t pixels = height * width;
  std::vector<double> src;
  for (std::size_t c = 0; c < channels; ++c) {
    double* ch = frame.data() + c * pixels;
    src.assign(ch, ch + pixels);
    auto at = [&](long long y, long long x) {
      y = std::clamp<long long>(y, 0, static_cast<long long>(height) - 1);
      x = std::clamp<long long>(x, 0, static_cast<long long>(width) - 1);
      return src[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)];
    };
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const long long yy = static_cast<long long>(y), xx = static_cast<long long>(x);
        const double lap = 4.0 * at(yy, xx) - at(yy - 1, xx) - at(yy + 1, xx) - at(yy, xx - 1) -
                           at(yy, xx + 1);
        ch[y * width + x] = std::clamp(src[y * width + x] + strength * lap, 0.0, 1.0);
      }
  }
}

inline void gamma_transform(std::vector<double>& frame, double gamma) {
  check(gamma > 0.0, "gamma_transform: gamma must be positive");
  for (double& v : frame) v = std::clamp(std::pow(v, gamma), 0.0, 1.0);
}

// Applies three distinct ops, in the declared order, to one frame tensor of
// shape (1, C, 1, H, W). Op parameters are drawn deterministically from seed.
inline Tensor augment_frame(const Tensor& frame, const std::vector<AugmentOp>& ops,
                            std::uint64_t seed) {
  check(ops.size() == 3, "augment_frame: exactly 3 of the 5 ops must be chosen");
  for (std::size_t i = 0; i < ops.size(); ++i)
    for (std::size_t j = i + 1; j < ops.size(); ++j)
      check(ops[i] != ops[j], "augment_frame: ops must be distinct");
  const Shape5& s = frame.shape();
  check(s[0] == 1 && s[2] == 1, "augment_frame: expected shape (1,C,1,H,W)");
  for (double v : frame.values())
    check(v >= 0.0 && v <= 1.0, "augment_frame: frame values must lie in [0,1]");

  std::vector<double> buf{frame.values().begin(), frame.values().end()};
  Rng rng(mix_seed(seed, 0xa06));
  for (AugmentOp op : ops) {
    switch (op) {
      case AugmentOp::SaltPepper:
        salt_pepper_noise(buf, s[1], s[3], s[4], rng.uniform(0.01, 0.05), rng);
        break;
      case AugmentOp::GaussianNoise:
        gaussian_noise(buf, rng.uniform(0.02, 0.06), rng);
        break;
      case AugmentOp::HistEqualize:
        hist_equalize(buf, s[1], s[3], s[4]);
        break;
      case AugmentOp::LaplacianSharpen:
        laplacian_sharpen(buf, s[1], s[3], s[4], rng.uniform(0.2, 0.6));
        break;
      case AugmentOp::GammaTransform:
        gamma_transform(buf, rng.uniform(0.6, 1.6));
        break;
    }
  }
  return Tensor::from_values(s, std::move(buf));
}

// Applies the same three ops to every frame of a clip (1, C, T, H, W); op
// parameters are drawn once per clip so the variant looks like one video.
inline Tensor augment_clip(const Tensor& clip, const std::vector<AugmentOp>& ops,
                           std::uint64_t seed) {
  check(ops.size() == 3, "augment_clip: exactly 3 of the 5 ops must be chosen");
  const Shape5& s = clip.shape();
  check(s[0] == 1, "augment_clip: expected shape (1,C,T,H,W)");
  const std::size_t frame_len = s[1] * s[3] * s[4];
  std::vector<double> out(clip.size());
  Rng rng(mix_seed(seed, 0xa07));
  struct Params {
    double sp_rate, sigma, strength, gamma;
  } pr{rng.uniform(0.01, 0.05), rng.uniform(0.02, 0.06), rng.uniform(0.2, 0.6),
       rng.uniform(0.6, 1.6)};

  const auto cv = clip.values();
  std::vector<double> buf(frame_len);
  for (std::size_t t = 0; t < s[2]; ++t) {
    for (std::size_t c = 0; c < s[1]; ++c)
      for (std::size_t h = 0; h < s[3]; ++h)
        for (std::size_t w = 0; w < s[4]; ++w)
          buf[(c * s[3] + h) * s[4] + w] = cv[flat_index(s, 0, c, t, h, w)];
    for (AugmentOp op : ops) {
      switch (op) {
        case AugmentOp::SaltPepper:
          salt_pepper_noise(buf, s[1], s[3], s[4], pr.sp_rate, rng);
          break;
        case AugmentOp::GaussianNoise:
          gaussian_noise(buf, pr.sigma, rng);
          break;
        case AugmentOp::HistEqualize:
          hist_equalize(buf, s[1], s[3], s[4]);
          break;
        case AugmentOp::LaplacianSharpen:
          laplacian_sharpen(buf, s[1], s[3], s[4], pr.strength);
          break;
        case AugmentOp::GammaTransform:
          gamma_transform(buf, pr.gamma);
          break;
      }
    }
    for (std::size_t c = 0; c < s[1]; ++c)
      for (std::size_t h = 0; h < s[3]; ++h)
        for (std::size_t w = 0; w < s[4]; ++w)
          out[flat_index(s, 0, c, t, h, w)] = buf[(c * s[3] + h) * s[4] + w];
  }
  return Tensor::from_values(s, std::move(out));
}

// ---------------------------------------------------------------------------
// full dataset
// ---------------------------------------------------------------------------

struct ClipRecord {
  std::int64_t id = 0;
  Tensor frames;
  std::vector<StudentTrack> students;
};

struct Dataset {
  DatasetSpec spec;
  std::vector<ClipRecord> clips;
  std::vector<int> splits;  // aligned with clips; 0 train, 1 test, 2 val
};

// Deterministic from spec.seed: base clips first, then augment_variants
// augmented copies per base clip (same annotations, photometric ops only),
// inheriting the base clip's split.
inline Dataset generate(const DatasetSpec& spec) {
  const DatasetLayout layout = generate_layout(spec);
  Dataset ds;
  ds.spec = spec;
  for (std::size_t i = 0; i < layout.clips.size(); ++i) {
    ClipRecord rec;
    rec.id = layout.clips[i].clip_id;
    rec.students = layout.clips[i].students;
    rec.frames = render_clip(layout.clips[i], spec);
    ds.clips.push_back(std::move(rec));
    ds.splits.push_back(layout.splits[i]);
  }
  if (spec.augment_variants > 0) {
    std::int64_t next_id = static_cast<std::int64_t>(layout.clips.size());
    const std::array<AugmentOp, 5> all{AugmentOp::SaltPepper, AugmentOp::GaussianNoise,
                                       AugmentOp::HistEqualize, AugmentOp::LaplacianSharpen,
                                       AugmentOp::GammaTransform};
    for (std::size_t i = 0; i < layout.clips.size(); ++i) {
      for (std::size_t v = 0; v < spec.augment_variants; ++v) {
        Rng rng(mix_seed(spec.seed, 0x200000 + i * 1024 + v));
        // pick 3 of the 5 ops
        std::array<AugmentOp, 5> pool = all;
        for (std::size_t k = 0; k < 3; ++k)
          std::swap(pool[k], pool[k + rng.index(5 - k)]);
        const std::vector<AugmentOp> ops{pool[0], pool[1], pool[2]};
        ClipRecord rec;
        rec.id = next_id++;
        rec.students = ds.clips[i].students;
        rec.frames = augment_clip(ds.clips[i].frames, ops, rng.next_u64());
        ds.clips.push_back(std::move(rec));
        ds.splits.push_back(ds.splits[i]);
      }
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// annotation CSV IO  (clip_id,frame_id,x1,y1,x2,y2,class_id[,score])
// ---------------------------------------------------------------------------

struct AnnotationRow {
  std::int64_t clip_id = 0;
  std::int64_t frame_id = 0;
  Box box;
  int class_id = 0;
  std::optional<double> score;  // absent for ground truth
};

inline std::vector<AnnotationRow> dataset_annotations(const Dataset& ds) {
  std::vector<AnnotationRow> rows;
  for (const ClipRecord& clip : ds.clips)
    for (std::size_t t = 0; t < ds.spec.t_raw; ++t)
      for (const StudentTrack& s : clip.students) {
        const Box b = s.box_at(t);
        for (int c : s.classes)
          rows.push_back({clip.id, static_cast<std::int64_t>(t), b, c, std::nullopt});
      }
  return rows;
}

inline void write_annotations(std::ostream& os, const std::vector<AnnotationRow>& rows) {
  for (const AnnotationRow& r : rows) {
    os << r.clip_id << ',' << r.frame_id << ',' << format_double(r.box.x1) << ','
       << format_double(r.box.y1) << ',' << format_double(r.box.x2) << ','
       << format_double(r.box.y2) << ',' << r.class_id;
    if (r.score) os << ',' << format_double(*r.score);
    os << '\n';
  }
}

inline void write_annotations(const std::filesystem::path& path,
                              const std::vector<AnnotationRow>& rows) {
  std::ofstream os(path);
  if (!os) io_fail("cannot open for writing: " + path.string());
  write_annotations(os, rows);
}

inline std::vector<AnnotationRow> read_annotations(std::istream& is,
                                                   int num_classes = kNumClasses) {
  std::vector<AnnotationRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 7 && fields.size() != 8)
      io_fail("annotations line " + std::to_string(lineno) + ": expected 7 or 8 fields, got " +
              std::to_string(fields.size()));
    AnnotationRow r;
    try {
      r.clip_id = std::stoll(fields[0]);
      r.frame_id = std::stoll(fields[1]);
      r.box = Box{std::stod(fields[2]), std::stod(fields[3]), std::stod(fields[4]),
                  std::stod(fields[5])};
      r.class_id = std::stoi(fields[6]);
      if (fields.size() == 8) r.score = std::stod(fields[7]);
    } catch (const std::exception&) {
      io_fail("annotations line " + std::to_string(lineno) + ": malformed field in '" + line +
              "'");
    }
    if (r.class_id < 0 || r.class_id >= num_classes)
      io_fail("annotations line " + std::to_string(lineno) + ": class_id " +
              std::to_string(r.class_id) + " outside [0," + std::to_string(num_classes) + ")");
    if (!(r.box.x1 < r.box.x2 && r.box.y1 < r.box.y2))
      io_fail("annotations line " + std::to_string(lineno) + ": degenerate box");
    rows.push_back(r);
  }
  return rows;
}

inline std::vector<AnnotationRow> read_annotations(const std::filesystem::path& path,
                                                   int num_classes = kNumClasses) {
  std::ifstream is(path);
  if (!is) io_fail("cannot open for reading: " + path.string());
  return read_annotations(is, num_classes);
}

inline DetectionRecord to_detection(const AnnotationRow& r, std::int64_t frame_key) {
  DetectionRecord d;
  d.frame_id = frame_key;
  d.class_id = r.class_id;
  d.box = r.box;
  d.score = r.score;
  return d;
}

// ---------------------------------------------------------------------------
// on-disk layout: manifest.csv (clip_id,path,split) + clips/*.t5 + annotations.csv
// ---------------------------------------------------------------------------

inline const char* split_name(int split) {
  return split == 0 ? "train" : split == 1 ? "test" : "val";
}

inline int parse_split(const std::string& s) {
  if (s == "train") return 0;
  if (s == "test") return 1;
  if (s == "val") return 2;
  io_fail("manifest: unknown split '" + s + "'");
}

inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "clips", ec);
  if (ec) io_fail("cannot create output directory: " + (dir / "clips").string());

  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) io_fail("cannot open for writing: " + (dir / "manifest.csv").string());
  for (std::size_t i = 0; i < ds.clips.size(); ++i) {
    const std::string rel = "clips/clip_" + std::to_string(ds.clips[i].id) + ".t5";
    save_tensor(dir / rel, ds.clips[i].frames);
    manifest << ds.clips[i].id << ',' << rel << ',' << split_name(ds.splits[i]) << '\n';
  }
  write_annotations(dir / "annotations.csv", dataset_annotations(ds));

  std::ofstream specfile(dir / "dataset_spec.txt");
  specfile << "num_clips=" << ds.spec.num_clips << "\nt_raw=" << ds.spec.t_raw
           << "\nheight=" << ds.spec.height << "\nwidth=" << ds.spec.width << "\nclass_probs=";
  for (std::size_t i = 0; i < ds.spec.class_probs.size(); ++i)
    specfile << (i ? "," : "") << format_double(ds.spec.class_probs[i]);
  specfile << "\nmin_students=" << ds.spec.min_students
           << "\nmax_students=" << ds.spec.max_students
           << "\nsecond_label_prob=" << format_double(ds.spec.second_label_prob)
           << "\naugment_variants=" << ds.spec.augment_variants << "\nseed=" << ds.spec.seed
           << "\nsplit_ratio=" << ds.spec.split_ratio[0] << ',' << ds.spec.split_ratio[1] << ','
           << ds.spec.split_ratio[2] << '\n';
}

// Model-ready view of one clip: keyframe boxes and their label sets.
struct ClipSample {
  std::int64_t clip_id = 0;
  Tensor frames;
  std::int64_t keyframe = 0;
  std::vector<Box> boxes;
  std::vector<std::vector<int>> box_classes;
};

struct DatasetView {
  std::vector<ClipSample> train, test, val;
  int num_classes = kNumClasses;
};

inline std::int64_t keyframe_of(std::size_t t_raw) { return static_cast<std::int64_t>(t_raw / 2); }

inline DatasetView make_view(const Dataset& ds) {
  DatasetView view;
  const std::int64_t kf = keyframe_of(ds.spec.t_raw);
  for (std::size_t i = 0; i < ds.clips.size(); ++i) {
    ClipSample s;
    s.clip_id = ds.clips[i].id;
    s.frames = ds.clips[i].frames;
    s.keyframe = kf;
    for (const StudentTrack& st : ds.clips[i].students) {
      s.boxes.push_back(st.box_at(static_cast<std::size_t>(kf)));
      s.box_classes.push_back(st.classes);
    }
    auto& bucket = ds.splits[i] == 0 ? view.train : ds.splits[i] == 1 ? view.test : view.val;
    bucket.push_back(std::move(s));
  }
  return view;
}

inline DatasetView load_view(const std::filesystem::path& dir, int num_classes = kNumClasses) {
  namespace fs = std::filesystem;
  std::ifstream manifest(dir / "manifest.csv");
  if (!manifest) io_fail("cannot open dataset manifest: " + (dir / "manifest.csv").string());

  const auto rows = read_annotations(dir / "annotations.csv", num_classes);
  std::map<std::int64_t, std::vector<const AnnotationRow*>> by_clip;
  for (const auto& r : rows) by_clip[r.clip_id].push_back(&r);

  DatasetView view;
  view.num_classes = num_classes;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 3)
      io_fail("manifest line " + std::to_string(lineno) + ": expected clip_id,path,split");
    ClipSample s;
    try {
      s.clip_id = std::stoll(fields[0]);
    } catch (const std::exception&) {
      io_fail("manifest line " + std::to_string(lineno) + ": bad clip id '" + fields[0] + "'");
    }
    const int split = parse_split(fields[2]);
    s.frames = load_tensor(dir / fields[1]);
    s.keyframe = keyframe_of(s.frames.shape()[2]);

    // group the keyframe's rows into per-box label sets (same box, same student)
    std::vector<Box> boxes;
    std::vector<std::vector<int>> classes;
    for (const AnnotationRow* r : by_clip[s.clip_id]) {
      if (r->frame_id != s.keyframe) continue;
      std::size_t slot = boxes.size();
      for (std::size_t b = 0; b < boxes.size(); ++b)
        if (boxes[b] == r->box) {
          slot = b;
          break;
        }
      if (slot == boxes.size()) {
        boxes.push_back(r->box);
        classes.emplace_back();
      }
      classes[slot].push_back(r->class_id);
    }
    s.boxes = std::move(boxes);
    s.box_classes = std::move(classes);
    auto& bucket = split == 0 ? view.train : split == 1 ? view.test : view.val;
    bucket.push_back(std::move(s));
  }
  return view;
}

}  // namespace tcs3d
