#pragma once

// PFM, PGM and PNG readers/writers for single-channel float grids.
//
// PFM files are written little-endian with scale -1.0 and rows stored
// bottom-to-top as the format prescribes. 8-bit and 16-bit integer inputs are
// mapped linearly to [0, 1]; no gamma is undone (inputs are assumed linear).

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <png.h>

#include "hsbp/error.hpp"
#include "hsbp/geometry.hpp"
#include "hsbp/grid.hpp"

namespace hsbp {

namespace detail {

inline std::string lower_extension(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return ext;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::IoError, "cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::IoError, "cannot write '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorKind::IoError, "short write to '" + path.string() + "'");
}

// Reads whitespace-separated header tokens, skipping '#' comments (netpbm style).
class HeaderReader {
public:
    explicit HeaderReader(const std::string& bytes) : bytes_(bytes) {}

    std::string token() {
        skip_space_and_comments();
        const std::size_t start = pos_;
        while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
        require(pos_ > start, ErrorKind::ParseError, "truncated image header");
        return bytes_.substr(start, pos_ - start);
    }

    // Consumes the single whitespace byte separating header from payload.
    std::size_t payload_offset() {
        require(pos_ < bytes_.size(), ErrorKind::ParseError, "missing image payload");
        return pos_ + 1;
    }

private:
    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    const std::string& bytes_;
    std::size_t pos_ = 0;
};

inline int parse_dim(const std::string& token, const std::string& what) {
    try {
        std::size_t used = 0;
        const long v = std::stol(token, &used);
        require(used == token.size() && v > 0 && v < (1L << 20), ErrorKind::ParseError, "bad " + what);
        return static_cast<int>(v);
    } catch (const std::logic_error&) {
        fail(ErrorKind::ParseError, "bad " + what + " '" + token + "'");
    }
}

inline float load_float(const char* p, bool little_endian) {
    std::array<unsigned char, 4> b;
    std::memcpy(b.data(), p, 4);
    const bool host_little = std::endian::native == std::endian::little;
    if (little_endian != host_little) std::swap(b[0], b[3]), std::swap(b[1], b[2]);
    float f;
    std::memcpy(&f, b.data(), 4);
    return f;
}

inline void store_float_le(std::string& out, float f) {
    std::array<unsigned char, 4> b;
    std::memcpy(b.data(), &f, 4);
    if constexpr (std::endian::native == std::endian::big) std::swap(b[0], b[3]), std::swap(b[1], b[2]);
    out.append(reinterpret_cast<const char*>(b.data()), 4);
}

struct PfmData {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<float> values; // top-to-bottom, interleaved channels
};

inline PfmData parse_pfm(const std::string& bytes, const std::string& name) {
    HeaderReader header(bytes);
    const std::string magic = header.token();
    require(magic == "Pf" || magic == "PF", ErrorKind::ParseError, "'" + name + "' is not a PFM file");
    PfmData d;
    d.channels = magic == "PF" ? 3 : 1;
    d.width = parse_dim(header.token(), "PFM width");
    d.height = parse_dim(header.token(), "PFM height");
    double scale = 0.0;
    try {
        scale = std::stod(header.token());
    } catch (const std::logic_error&) {
        fail(ErrorKind::ParseError, "'" + name + "': bad PFM scale");
    }
    require(scale != 0.0, ErrorKind::ParseError, "'" + name + "': PFM scale must be nonzero");
    const bool little = scale < 0.0;
    const std::size_t offset = header.payload_offset();
    const std::size_t count = static_cast<std::size_t>(d.width) * d.height * d.channels;
    require(bytes.size() >= offset + 4 * count, ErrorKind::ParseError, "'" + name + "': truncated PFM payload");
    d.values.resize(count);
    const std::size_t row = static_cast<std::size_t>(d.width) * d.channels;
    for (int y = 0; y < d.height; ++y) {
        const int file_row = d.height - 1 - y;
        const char* src = bytes.data() + offset + 4 * row * file_row;
        for (std::size_t i = 0; i < row; ++i) d.values[row * y + i] = load_float(src + 4 * i, little);
    }
    return d;
}

inline std::string encode_pfm(int width, int height, int channels, const std::vector<float>& values) {
    std::string out = (channels == 3 ? "PF\n" : "Pf\n") + std::to_string(width) + " " + std::to_string(height) + "\n-1.0\n";
    out.reserve(out.size() + values.size() * 4);
    const std::size_t row = static_cast<std::size_t>(width) * channels;
    for (int y = height - 1; y >= 0; --y)
        for (std::size_t i = 0; i < row; ++i) store_float_le(out, values[row * y + i]);
    return out;
}

struct PngCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    bool reading = true;
    ~PngCloser() {
        if (!png) return;
        if (reading) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        else png_destroy_write_struct(&png, info ? &info : nullptr);
    }
};

struct FileCloser {
    void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};

inline void png_error_handler(png_structp, png_const_charp message) {
    throw Error(ErrorKind::ParseError, std::string("png: ") + message);
}

inline void png_warning_handler(png_structp, png_const_charp) {}

// Writes 8-bit gray (channels == 1) or RGB (channels == 3) rows.
inline void write_png_bytes(const std::filesystem::path& path, int width, int height, int channels,
                            const std::vector<unsigned char>& pixels) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.string().c_str(), "wb"));
    require(fp != nullptr, ErrorKind::IoError, "cannot write '" + path.string() + "'");
    PngCloser guard;
    guard.reading = false;
    guard.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
    require(guard.png != nullptr, ErrorKind::IoError, "png_create_write_struct failed");
    guard.info = png_create_info_struct(guard.png);
    png_init_io(guard.png, fp.get());
    png_set_IHDR(guard.png, guard.info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(guard.png, guard.info);
    const std::size_t stride = static_cast<std::size_t>(width) * channels;
    for (int y = 0; y < height; ++y)
        png_write_row(guard.png, const_cast<png_bytep>(pixels.data() + stride * y));
    png_write_end(guard.png, nullptr);
}

inline Image read_png(const std::filesystem::path& path) {
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.string().c_str(), "rb"));
    require(fp != nullptr, ErrorKind::IoError, "cannot open '" + path.string() + "'");
    PngCloser guard;
    guard.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
    require(guard.png != nullptr, ErrorKind::IoError, "png_create_read_struct failed");
    guard.info = png_create_info_struct(guard.png);
    png_init_io(guard.png, fp.get());
    png_read_info(guard.png, guard.info);
    const auto width = static_cast<int>(png_get_image_width(guard.png, guard.info));
    const auto height = static_cast<int>(png_get_image_height(guard.png, guard.info));
    const int depth = png_get_bit_depth(guard.png, guard.info);
    const int color = png_get_color_type(guard.png, guard.info);
    require(color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA, ErrorKind::ParseError,
            "'" + path.string() + "': only grayscale PNG is supported");
    if (depth < 8) png_set_expand_gray_1_2_4_to_8(guard.png);
    if (color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_strip_alpha(guard.png);
    if (depth == 16 && std::endian::native == std::endian::little) png_set_swap(guard.png);
    png_read_update_info(guard.png, guard.info);
    const std::size_t rowbytes = png_get_rowbytes(guard.png, guard.info);
    std::vector<unsigned char> row(rowbytes);
    Image img(width, height);
    for (int y = 0; y < height; ++y) {
        png_read_row(guard.png, row.data(), nullptr);
        for (int x = 0; x < width; ++x) {
            if (depth == 16) {
                std::uint16_t v;
                std::memcpy(&v, row.data() + 2 * x, 2);
                img(x, y) = v / 65535.0;
            } else {
                img(x, y) = row[x] / 255.0;
            }
        }
    }
    return img;
}

} // namespace detail

inline Image read_pfm(const std::filesystem::path& path) {
    const auto d = detail::parse_pfm(detail::read_file(path), path.string());
    require(d.channels == 1, ErrorKind::ParseError, "'" + path.string() + "': expected single-channel PFM");
    Image img(d.width, d.height);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = d.values[i];
    return img;
}

inline void write_pfm(const std::filesystem::path& path, const Image& image) {
    std::vector<float> v(image.size());
    for (std::size_t i = 0; i < image.size(); ++i) v[i] = static_cast<float>(image[i]);
    detail::write_file(path, detail::encode_pfm(image.width(), image.height(), 1, v));
}

inline Grid<Vec3> read_pfm3(const std::filesystem::path& path) {
    const auto d = detail::parse_pfm(detail::read_file(path), path.string());
    require(d.channels == 3, ErrorKind::ParseError, "'" + path.string() + "': expected 3-channel PFM");
    Grid<Vec3> g(d.width, d.height, Vec3::Zero());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = Vec3(d.values[3 * i], d.values[3 * i + 1], d.values[3 * i + 2]);
    return g;
}

inline void write_pfm3(const std::filesystem::path& path, const Grid<Vec3>& field) {
    std::vector<float> v(field.size() * 3);
    for (std::size_t i = 0; i < field.size(); ++i)
        for (int c = 0; c < 3; ++c) v[3 * i + c] = static_cast<float>(field[i](c));
    detail::write_file(path, detail::encode_pfm(field.width(), field.height(), 3, v));
}

// Binary PGM (P5), 8 or 16 bits; values mapped to [0, 1].
inline Image read_pgm(const std::filesystem::path& path) {
    const std::string bytes = detail::read_file(path);
    detail::HeaderReader header(bytes);
    require(header.token() == "P5", ErrorKind::ParseError, "'" + path.string() + "' is not a binary PGM");
    const int w = detail::parse_dim(header.token(), "PGM width");
    const int h = detail::parse_dim(header.token(), "PGM height");
    const int maxval = detail::parse_dim(header.token(), "PGM maxval");
    require(maxval <= 65535, ErrorKind::ParseError, "'" + path.string() + "': PGM maxval out of range");
    const std::size_t offset = header.payload_offset();
    const int bpp = maxval < 256 ? 1 : 2;
    require(bytes.size() >= offset + static_cast<std::size_t>(w) * h * bpp, ErrorKind::ParseError,
            "'" + path.string() + "': truncated PGM payload");
    Image img(w, h);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + offset);
    for (std::size_t i = 0; i < img.size(); ++i) {
        const unsigned v = bpp == 1 ? p[i] : (static_cast<unsigned>(p[2 * i]) << 8) | p[2 * i + 1];
        img[i] = static_cast<double>(v) / maxval;
    }
    return img;
}

// Writes `image` clamped to [0, 1] at the given bit depth (8 or 16).
inline void write_pgm(const std::filesystem::path& path, const Image& image, int bits = 8) {
    require(bits == 8 || bits == 16, ErrorKind::InvalidArgument, "PGM bit depth must be 8 or 16");
    const unsigned maxval = bits == 8 ? 255u : 65535u;
    std::string out = "P5\n" + std::to_string(image.width()) + " " + std::to_string(image.height()) + "\n" +
                      std::to_string(maxval) + "\n";
    for (double v : image) {
        const double c = std::clamp(v, 0.0, 1.0);
        const auto q = static_cast<unsigned>(std::lround(c * maxval));
        if (bits == 16) out.push_back(static_cast<char>(q >> 8));
        out.push_back(static_cast<char>(q & 0xff));
    }
    detail::write_file(path, out);
}

inline void write_image(const std::filesystem::path& path, const Image& image);

inline void write_mask(const std::filesystem::path& path, const Mask& mask) {
    Image img(mask.width(), mask.height());
    for (std::size_t i = 0; i < mask.size(); ++i) img[i] = mask[i] ? 1.0 : 0.0;
    write_image(path, img);
}

inline Mask read_mask(const std::filesystem::path& path);

inline Image read_png(const std::filesystem::path& path) { return detail::read_png(path); }

inline void write_png(const std::filesystem::path& path, const Image& image) {
    std::vector<unsigned char> px(image.size());
    for (std::size_t i = 0; i < image.size(); ++i)
        px[i] = static_cast<unsigned char>(std::lround(std::clamp(image[i], 0.0, 1.0) * 255.0));
    detail::write_png_bytes(path, image.width(), image.height(), 1, px);
}

// Dispatches on extension: .pfm, .pgm, .png.
inline Image read_image(const std::filesystem::path& path) {
    const std::string ext = detail::lower_extension(path);
    if (ext == ".pfm") return read_pfm(path);
    if (ext == ".pgm") return read_pgm(path);
    if (ext == ".png") return read_png(path);
    fail(ErrorKind::ParseError, "unsupported image format '" + path.string() + "'");
}

inline void write_image(const std::filesystem::path& path, const Image& image) {
    const std::string ext = detail::lower_extension(path);
    if (ext == ".pfm") return write_pfm(path, image);
    if (ext == ".pgm") return write_pgm(path, image, 16);
    if (ext == ".png") return write_png(path, image);
    fail(ErrorKind::ParseError, "unsupported image format '" + path.string() + "'");
}

inline Mask read_mask(const std::filesystem::path& path) {
    const Image img = read_image(path);
    Mask m(img.width(), img.height());
    for (std::size_t i = 0; i < img.size(); ++i) m[i] = img[i] > 0.5 ? 1 : 0;
    return m;
}

} // namespace hsbp
