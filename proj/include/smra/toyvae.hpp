// Copyright (c) 2026 The smrabooth authors
// SPDX-License-Identifier: Apache-2.0
//
// Lossless pixel <-> latent rearrangement with 4x temporal and 4x4 spatial
// packing. Video [T, H, W, C] with T = 1 + 4k maps to latents
// [(T-1)/4 + 1, H/4, W/4, C*16*4]. The first temporal group holds four copies
// of frame 0; decode reads back only the first copy.

#pragma once

#include <filesystem>
#include <iomanip>

#include "smra/autograd.hpp"
#include "smra/stns.hpp"

namespace smra::toyvae {

inline constexpr std::size_t kTime = 4;
inline constexpr std::size_t kSpace = 4;

struct VideoShape {
  std::size_t frames, height, width, channels;
  Dims dims() const { return {frames, height, width, channels}; }
};

struct LatentShape {
  std::size_t frames, height, width, channels;
  Dims dims() const { return {frames, height, width, channels}; }
};

inline VideoShape video_shape(const Dims& d) {
  if (d.size() != 4) throw Error(ErrorCode::ShapeError, "video must be [T,H,W,C], got " + dims_str(d));
  VideoShape s{d[0], d[1], d[2], d[3]};
  if (s.frames < 1 || (s.frames - 1) % kTime != 0)
    throw Error(ErrorCode::BadFrameCount, std::to_string(s.frames) + " frames; need T = 1 (mod 4)");
  if (s.height % kSpace != 0 || s.width % kSpace != 0)
    throw Error(ErrorCode::BadResolution,
                std::to_string(s.height) + "x" + std::to_string(s.width) + " not divisible by 4");
  return s;
}

inline std::size_t latent_frames(std::size_t video_frames) {
  if (video_frames < 1 || (video_frames - 1) % kTime != 0)
    throw Error(ErrorCode::BadFrameCount, std::to_string(video_frames) + " frames; need T = 1 (mod 4)");
  return (video_frames - 1) / kTime + 1;
}

inline std::size_t video_frames(std::size_t latent_frames) { return 1 + kTime * (latent_frames - 1); }

inline LatentShape latent_shape(const VideoShape& v) {
  return {latent_frames(v.frames), v.height / kSpace, v.width / kSpace, v.channels * kSpace * kSpace * kTime};
}

inline VideoShape video_shape_of_latent(const Dims& d, std::size_t channels = 3) {
  if (d.size() != 4) throw Error(ErrorCode::ShapeError, "latent must be [T',h,w,D], got " + dims_str(d));
  if (d[0] < 1) throw Error(ErrorCode::ShapeError, "latent needs at least one frame");
  if (d[3] != channels * kSpace * kSpace * kTime)
    throw Error(ErrorCode::BadChannelCount,
                "D_lat " + std::to_string(d[3]) + " != " + std::to_string(channels * kSpace * kSpace * kTime));
  return {video_frames(d[0]), d[1] * kSpace, d[2] * kSpace, channels};
}

namespace detail {

// Pixel flat index feeding latent element (k, i, j, ch).
inline ag::IndexMap encode_map(const VideoShape& v) {
  const LatentShape l = latent_shape(v);
  auto idx = std::make_shared<std::vector<std::size_t>>(numel(l.dims()));
  std::size_t o = 0;
  for (std::size_t k = 0; k < l.frames; ++k)
    for (std::size_t i = 0; i < l.height; ++i)
      for (std::size_t j = 0; j < l.width; ++j)
        for (std::size_t tt = 0; tt < kTime; ++tt)
          for (std::size_t dy = 0; dy < kSpace; ++dy)
            for (std::size_t dx = 0; dx < kSpace; ++dx)
              for (std::size_t c = 0; c < v.channels; ++c) {
                const std::size_t f = k == 0 ? 0 : kTime * (k - 1) + 1 + tt;
                const std::size_t y = kSpace * i + dy, x = kSpace * j + dx;
                (*idx)[o++] = ((f * v.height + y) * v.width + x) * v.channels + c;
              }
  return idx;
}

// Latent flat index feeding pixel (f, y, x, c).
inline ag::IndexMap decode_map(const VideoShape& v) {
  const LatentShape l = latent_shape(v);
  auto idx = std::make_shared<std::vector<std::size_t>>(numel(v.dims()));
  std::size_t o = 0;
  for (std::size_t f = 0; f < v.frames; ++f)
    for (std::size_t y = 0; y < v.height; ++y)
      for (std::size_t x = 0; x < v.width; ++x)
        for (std::size_t c = 0; c < v.channels; ++c) {
          const std::size_t k = f == 0 ? 0 : (f - 1) / kTime + 1;
          const std::size_t tt = f == 0 ? 0 : (f - 1) % kTime;
          const std::size_t ch = ((tt * kSpace + y % kSpace) * kSpace + x % kSpace) * v.channels + c;
          (*idx)[o++] = ((k * l.height + y / kSpace) * l.width + x / kSpace) * l.channels + ch;
        }
  return idx;
}

}  // namespace detail

/// Differentiable encode on the tape.
template <class T>
ag::Var<T> encode(ag::Var<T> video) {
  const VideoShape v = video_shape(video.dims());
  return ag::gather(video, detail::encode_map(v), latent_shape(v).dims());
}

/// Differentiable decode on the tape.
template <class T>
ag::Var<T> decode(ag::Var<T> latent) {
  const VideoShape v = video_shape_of_latent(latent.dims());
  return ag::gather(latent, detail::decode_map(v), v.dims());
}

template <class T>
Tensor<T> encode(const Tensor<T>& video) {
  const VideoShape v = video_shape(video.dims());
  const auto idx = detail::encode_map(v);
  Tensor<T> out(latent_shape(v).dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = video[(*idx)[i]];
  return out;
}

template <class T>
Tensor<T> decode(const Tensor<T>& latent) {
  const VideoShape v = video_shape_of_latent(latent.dims());
  const auto idx = detail::decode_map(v);
  Tensor<T> out(v.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = latent[(*idx)[i]];
  return out;
}

/// Validates shape and clips values into [0, 1].
template <class T>
Tensor<T> make_video(Tensor<T> frames) {
  video_shape(frames.dims());
  for (auto& v : frames.vec()) v = std::clamp(v, T(0), T(1));
  return frames;
}

/// One sliding-window decode: a window of `window` latents starting at
/// latent `latent_start`, keeping frames [keep_begin, keep_begin + kept) of
/// its own decode, which sit at `pixel_frame_offset` in the full video.
struct WindowPlan {
  std::size_t latent_start;
  std::size_t keep_begin;
  std::size_t kept;
  std::size_t pixel_frame_offset;
};

inline constexpr std::size_t kWindowDiscard = 1 + kTime;

inline std::vector<WindowPlan> window_plan(std::size_t latent_count, std::size_t window = 6, std::size_t stride = 2) {
  if (window < 2 || stride < 1 || stride >= window)
    throw Error(ErrorCode::ShapeError, "need window >= 2 and 1 <= stride < window");
  if (latent_count < window)
    throw Error(ErrorCode::WindowTooLarge,
                "window " + std::to_string(window) + " exceeds " + std::to_string(latent_count) + " latent frames");
  const std::size_t decoded = video_frames(window);
  std::vector<std::size_t> starts{0};
  while (starts.back() + window < latent_count) starts.push_back(std::min(starts.back() + stride, latent_count - window));
  std::vector<WindowPlan> plan;
  for (auto s : starts) {
    if (s == 0) {
      plan.push_back({0, 0, decoded, 0});
    } else if (decoded > kWindowDiscard) {
      // Standalone frame r >= 1 of a window at latent s is pixel frame 4s + r.
      plan.push_back({s, kWindowDiscard, decoded - kWindowDiscard, kTime * s + kWindowDiscard});
    }
  }
  return plan;
}

template <class T>
struct WindowBlock {
  std::size_t pixel_frame_offset;
  Tensor<T> frames;
};

/// Decodes overlapping latent windows independently and keeps the frames
/// each window is trusted for.
template <class T>
std::vector<WindowBlock<T>> decode_windowed(const Tensor<T>& latent, std::size_t window = 6, std::size_t stride = 2) {
  video_shape_of_latent(latent.dims());
  const std::size_t per_latent = latent.size() / latent.dim(0);
  std::vector<WindowBlock<T>> out;
  for (const auto& p : window_plan(latent.dim(0), window, stride)) {
    Dims wd = latent.dims();
    wd[0] = window;
    std::vector<T> sub(latent.vec().begin() + p.latent_start * per_latent,
                       latent.vec().begin() + (p.latent_start + window) * per_latent);
    const Tensor<T> frames = decode(Tensor<T>(wd, std::move(sub)));
    const std::size_t per_frame = frames.size() / frames.dim(0);
    Dims kd = frames.dims();
    kd[0] = p.kept;
    std::vector<T> kept(frames.vec().begin() + p.keep_begin * per_frame,
                        frames.vec().begin() + (p.keep_begin + p.kept) * per_frame);
    out.push_back({p.pixel_frame_offset, Tensor<T>(kd, std::move(kept))});
  }
  return out;
}

/// Tape version of decode_windowed; returns kept blocks in plan order.
template <class T>
std::vector<ag::Var<T>> decode_windowed(ag::Var<T> latent, std::size_t window = 6, std::size_t stride = 2) {
  video_shape_of_latent(latent.dims());
  std::vector<ag::Var<T>> out;
  for (const auto& p : window_plan(latent.dim(0), window, stride)) {
    auto frames = decode(ag::slice0(latent, p.latent_start, p.latent_start + window));
    out.push_back(ag::slice0(frames, p.keep_begin, p.keep_begin + p.kept));
  }
  return out;
}

/// Frame k of a [T,H,W,C] video as [H,W,C].
template <class T>
Tensor<T> frame(const Tensor<T>& video, std::size_t k) {
  const std::size_t per = video.size() / video.dim(0);
  std::vector<T> d(video.vec().begin() + k * per, video.vec().begin() + (k + 1) * per);
  return Tensor<T>({video.dim(1), video.dim(2), video.dim(3)}, std::move(d));
}

template <class T>
void write_frames(const std::filesystem::path& dir, const Tensor<T>& video) {
  std::filesystem::create_directories(dir);
  for (std::size_t k = 0; k < video.dim(0); ++k) {
    std::ostringstream name;
    name << "frame_" << std::setw(3) << std::setfill('0') << k << ".ppm";
    io::write_file(dir / name.str(), io::encode_ppm(frame(video, k)));
  }
}

}  // namespace smra::toyvae
