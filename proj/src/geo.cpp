#include "hexfleet/geo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <fmt/format.h>

#include "hexfleet/errors.hpp"

namespace hexfleet::geo {
namespace {

constexpr std::string_view kAlphabet = "0123456789bcdefghjkmnpqrstuvwxyz";

constexpr double deg2rad(double d) { return d * std::numbers::pi / 180.0; }
constexpr double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }

void check_precision(int precision) {
  if (precision < 1 || precision > kMaxGeohashPrecision) {
    throw std::invalid_argument(
        fmt::format("geohash precision {} outside [1, {}]", precision, kMaxGeohashPrecision));
  }
}

// Interleaved bisection bits, longitude first.
std::vector<int> interleave_bits(const GeoPoint& p, int precision) {
  check_precision(precision);
  double lat_lo = -90.0, lat_hi = 90.0;
  double lon_lo = -180.0, lon_hi = 180.0;
  std::vector<int> bits(static_cast<std::size_t>(5 * precision));
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (i % 2 == 0) {
      double mid = 0.5 * (lon_lo + lon_hi);
      if (p.lon() >= mid) {
        bits[i] = 1;
        lon_lo = mid;
      } else {
        lon_hi = mid;
      }
    } else {
      double mid = 0.5 * (lat_lo + lat_hi);
      if (p.lat() >= mid) {
        bits[i] = 1;
        lat_lo = mid;
      } else {
        lat_hi = mid;
      }
    }
  }
  return bits;
}

double wrap_degrees(double deg) {
  double w = std::fmod(deg, 360.0);
  if (w < 0.0) w += 360.0;
  if (w >= 360.0) w -= 360.0;
  return w;
}

}  // namespace

GeoPoint::GeoPoint(double lat, double lon) : lat_(lat), lon_(lon) {
  if (!std::isfinite(lat) || !std::isfinite(lon) || lat < -90.0 || lat > 90.0 || lon < -180.0 ||
      lon > 180.0) {
    throw std::invalid_argument(fmt::format("invalid coordinate ({}, {})", lat, lon));
  }
}

GeoHashCode::GeoHashCode(std::string code) : code_(std::move(code)) {
  if (code_.empty()) throw ParseError("empty geohash");
  for (char c : code_) {
    if (kAlphabet.find(c) == std::string_view::npos) {
      throw ParseError(fmt::format("character '{}' is not in the geohash alphabet", c));
    }
  }
}

bool DecodedCell::contains(const GeoPoint& p) const {
  return p.lat() >= center.lat() - lat_err && p.lat() <= center.lat() + lat_err &&
         p.lon() >= center.lon() - lon_err && p.lon() <= center.lon() + lon_err;
}

GeoHashCode geohash_encode(const GeoPoint& p, int precision) {
  auto bits = interleave_bits(p, precision);
  std::string code;
  code.reserve(static_cast<std::size_t>(precision));
  for (std::size_t c = 0; c < bits.size(); c += 5) {
    int digit = 0;
    for (std::size_t b = 0; b < 5; ++b) digit = (digit << 1) | bits[c + b];
    code.push_back(kAlphabet[static_cast<std::size_t>(digit)]);
  }
  return GeoHashCode(std::move(code));
}

DecodedCell geohash_decode(const GeoHashCode& code) {
  double lat_lo = -90.0, lat_hi = 90.0;
  double lon_lo = -180.0, lon_hi = 180.0;
  bool lon_bit = true;
  for (char c : code.code()) {
    auto digit = static_cast<int>(kAlphabet.find(c));
    for (int b = 4; b >= 0; --b) {
      int bit = (digit >> b) & 1;
      if (lon_bit) {
        double mid = 0.5 * (lon_lo + lon_hi);
        (bit ? lon_lo : lon_hi) = mid;
      } else {
        double mid = 0.5 * (lat_lo + lat_hi);
        (bit ? lat_lo : lat_hi) = mid;
      }
      lon_bit = !lon_bit;
    }
  }
  return DecodedCell{GeoPoint(0.5 * (lat_lo + lat_hi), 0.5 * (lon_lo + lon_hi)),
                     0.5 * (lat_hi - lat_lo), 0.5 * (lon_hi - lon_lo)};
}

std::vector<double> location_embedding(const GeoPoint& p, int precision) {
  auto bits = interleave_bits(p, precision);
  return {bits.begin(), bits.end()};
}

double haversine_km(const GeoPoint& a, const GeoPoint& b) {
  double phi1 = deg2rad(a.lat()), phi2 = deg2rad(b.lat());
  double dphi = phi2 - phi1;
  double dlambda = deg2rad(b.lon() - a.lon());
  double h = std::sin(dphi / 2) * std::sin(dphi / 2) +
             std::cos(phi1) * std::cos(phi2) * std::sin(dlambda / 2) * std::sin(dlambda / 2);
  h = std::min(1.0, h);
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

double azimuth_deg(const GeoPoint& from, const GeoPoint& to) {
  if (from == to) throw std::invalid_argument("azimuth of coincident points is undefined");
  double phi1 = deg2rad(from.lat()), phi2 = deg2rad(to.lat());
  double dlambda = deg2rad(to.lon() - from.lon());
  double y = std::sin(dlambda) * std::cos(phi2);
  double x = std::cos(phi1) * std::sin(phi2) - std::sin(phi1) * std::cos(phi2) * std::cos(dlambda);
  return wrap_degrees(rad2deg(std::atan2(y, x)));
}

GeoPoint displace(const GeoPoint& from, double distance_km, double deg) {
  if (!(distance_km >= 0.0) || !std::isfinite(distance_km)) {
    throw std::invalid_argument(fmt::format("displacement distance {} must be >= 0", distance_km));
  }
  if (distance_km == 0.0) return from;
  double delta = distance_km / kEarthRadiusKm;
  double theta = deg2rad(deg);
  double phi1 = deg2rad(from.lat()), lambda1 = deg2rad(from.lon());
  double sin_phi2 = std::sin(phi1) * std::cos(delta) + std::cos(phi1) * std::sin(delta) * std::cos(theta);
  sin_phi2 = std::clamp(sin_phi2, -1.0, 1.0);
  double phi2 = std::asin(sin_phi2);
  double lambda2 = lambda1 + std::atan2(std::sin(theta) * std::sin(delta) * std::cos(phi1),
                                        std::cos(delta) - std::sin(phi1) * sin_phi2);
  double lon = rad2deg(lambda2);
  lon = std::fmod(lon + 540.0, 360.0) - 180.0;
  return GeoPoint(std::clamp(rad2deg(phi2), -90.0, 90.0), std::clamp(lon, -180.0, 180.0));
}

}  // namespace hexfleet::geo
