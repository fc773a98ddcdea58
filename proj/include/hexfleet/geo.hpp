#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace hexfleet::geo {

inline constexpr double kEarthRadiusKm = 6371.0088;
inline constexpr int kMaxGeohashPrecision = 16;
inline constexpr int kDefaultGeohashPrecision = 8;

// WGS-84 coordinate in degrees. Construction rejects non-finite or
// out-of-range values, so every GeoPoint in the program is valid.
class GeoPoint {
 public:
  GeoPoint() = default;
  GeoPoint(double lat, double lon);

  double lat() const { return lat_; }
  double lon() const { return lon_; }

  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;

 private:
  double lat_ = 0.0;
  double lon_ = 0.0;
};

class GeoHashCode {
 public:
  // Throws ParseError on characters outside the base-32 alphabet.
  explicit GeoHashCode(std::string code);

  const std::string& code() const { return code_; }
  int precision() const { return static_cast<int>(code_.size()); }

  friend bool operator==(const GeoHashCode&, const GeoHashCode&) = default;

 private:
  std::string code_;
};

struct DecodedCell {
  GeoPoint center;
  double lat_err = 0.0;
  double lon_err = 0.0;

  bool contains(const GeoPoint& p) const;
};

GeoHashCode geohash_encode(const GeoPoint& p, int precision);
DecodedCell geohash_decode(const GeoHashCode& code);

// The 5 * precision interleaved GeoHash bits (longitude bit first) as 0/1 reals.
std::vector<double> location_embedding(const GeoPoint& p, int precision);

double haversine_km(const GeoPoint& a, const GeoPoint& b);

// Initial great-circle bearing in [0, 360), clockwise from north.
// Throws std::invalid_argument for coincident points.
double azimuth_deg(const GeoPoint& from, const GeoPoint& to);

// Great-circle forward solution: the point reached after travelling
// distance_km along initial bearing deg.
GeoPoint displace(const GeoPoint& from, double distance_km, double deg);

}  // namespace hexfleet::geo
