#include "savehr/tape.hpp"

#include <algorithm>
#include <cmath>

namespace savehr {

int Tape::push(Matrix value) {
    const int id = static_cast<int>(nodes_.size());
    Matrix grad = Matrix::zeros(value.rows, value.cols);
    nodes_.push_back(Node{std::move(value), std::move(grad)});
    return id;
}

Tape::Var Tape::constant(Matrix m) { return Var{push(std::move(m))}; }

Tape::Var Tape::scalar(double v) {
    Matrix m(1, 1);
    m.at(0, 0) = v;
    return constant(std::move(m));
}

Tape::Var Tape::param(ParamSlot& slot) {
    const int id = push(slot.value);
    leased_.emplace_back(&slot, id);
    return Var{id};
}

Tape::Var Tape::matmul(Var a, Var b) {
    const int out = push(matmul_values(v(a.id), v(b.id)));
    back_.push_back([a, b, out](Tape& t) {
        const Matrix& go = t.g(out);
        const Matrix& av = t.v(a.id);
        const Matrix& bv = t.v(b.id);
        Matrix& ga = t.g(a.id);
        Matrix& gb = t.g(b.id);
        // dA += G * B^T
        for (int i = 0; i < av.rows; ++i)
            for (int k = 0; k < av.cols; ++k) {
                double s = 0.0;
                for (int j = 0; j < bv.cols; ++j) s += go.at(i, j) * bv.at(k, j);
                ga.at(i, k) += s;
            }
        // dB += A^T * G
        for (int k = 0; k < bv.rows; ++k)
            for (int j = 0; j < bv.cols; ++j) {
                double s = 0.0;
                for (int i = 0; i < av.rows; ++i) s += av.at(i, k) * go.at(i, j);
                gb.at(k, j) += s;
            }
    });
    return Var{out};
}

Tape::Var Tape::transpose(Var a) {
    const Matrix& av = v(a.id);
    Matrix m(av.cols, av.rows);
    for (int i = 0; i < av.rows; ++i)
        for (int j = 0; j < av.cols; ++j) m.at(j, i) = av.at(i, j);
    const int out = push(std::move(m));
    back_.push_back([a, out](Tape& t) {
        const Matrix& go = t.g(out);
        Matrix& ga = t.g(a.id);
        for (int i = 0; i < ga.rows; ++i)
            for (int j = 0; j < ga.cols; ++j) ga.at(i, j) += go.at(j, i);
    });
    return Var{out};
}

Tape::Var Tape::add(Var a, Var b) {
    const Matrix& av = v(a.id);
    const Matrix& bv = v(b.id);
    if (!av.same_shape(bv))
        throw std::invalid_argument("add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    Matrix m = av;
    for (std::size_t i = 0; i < m.size(); ++i) m.data[i] += bv.data[i];
    const int out = push(std::move(m));
    back_.push_back([a, b, out](Tape& t) {
        const Matrix& go = t.g(out);
        Matrix& ga = t.g(a.id);
        Matrix& gb = t.g(b.id);
        for (std::size_t i = 0; i < go.size(); ++i) {
            ga.data[i] += go.data[i];
            gb.data[i] += go.data[i];
        }
    });
    return Var{out};
}

Tape::Var Tape::sub(Var a, Var b) {
    const Matrix& av = v(a.id);
    const Matrix& bv = v(b.id);
    if (!av.same_shape(bv))
        throw std::invalid_argument("sub: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    Matrix m = av;
    for (std::size_t i = 0; i < m.size(); ++i) m.data[i] -= bv.data[i];
    const int out = push(std::move(m));
    back_.push_back([a, b, out](Tape& t) {
        const Matrix& go = t.g(out);
        Matrix& ga = t.g(a.id);
        Matrix& gb = t.g(b.id);
        for (std::size_t i = 0; i < go.size(); ++i) {
            ga.data[i] += go.data[i];
            gb.data[i] -= go.data[i];
        }
    });
    return Var{out};
}

Tape::Var Tape::hadamard(Var a, Var b) {
    const Matrix& av = v(a.id);
    const Matrix& bv = v(b.id);
    if (!av.same_shape(bv))
        throw std::invalid_argument("hadamard: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    Matrix m = av;
    for (std::size_t i = 0; i < m.size(); ++i) m.data[i] *= bv.data[i];
    const int out = push(std::move(m));
    back_.push_back([a, b, out](Tape& t) {
        const Matrix& go = t.g(out);
        const Matrix& av2 = t.v(a.id);
        const Matrix& bv2 = t.v(b.id);
        Matrix& ga = t.g(a.id);
        Matrix& gb = t.g(b.id);
        for (std::size_t i = 0; i < go.size(); ++i) {
            ga.data[i] += go.data[i] * bv2.data[i];
            gb.data[i] += go.data[i] * av2.data[i];
        }
    });
    return Var{out};
}

Tape::Var Tape::scale(Var a, double c) { return affine(a, c, 0.0); }

Tape::Var Tape::affine(Var x, double a, double b) {
    Matrix m = v(x.id);
    for (double& d : m.data) d = a * d + b;
    const int out = push(std::move(m));
    back_.push_back([x, a, out](Tape& t) {
        const Matrix& go = t.g(out);
        Matrix& gx = t.g(x.id);
        for (std::size_t i = 0; i < go.size(); ++i) gx.data[i] += a * go.data[i];
    });
    return Var{out};
}

Tape::Var Tape::tanh_elem(Var a) {
    Matrix m = v(a.id);
    for (double& d : m.data) d = std::tanh(d);
    const int out = push(std::move(m));
    back_.push_back([a, out](Tape& t) {
        const Matrix& go = t.g(out);
        const Matrix& y = t.v(out);
        Matrix& ga = t.g(a.id);
        for (std::size_t i = 0; i < go.size(); ++i)
            ga.data[i] += go.data[i] * (1.0 - y.data[i] * y.data[i]);
    });
    return Var{out};
}

Tape::Var Tape::sigmoid_elem(Var a) {
    Matrix m = v(a.id);
    for (double& d : m.data) {
        if (d >= 0.0) {
            d = 1.0 / (1.0 + std::exp(-d));
        } else {
            const double e = std::exp(d);
            d = e / (1.0 + e);
        }
    }
    const int out = push(std::move(m));
    back_.push_back([a, out](Tape& t) {
        const Matrix& go = t.g(out);
        const Matrix& y = t.v(out);
        Matrix& ga = t.g(a.id);
        for (std::size_t i = 0; i < go.size(); ++i)
            ga.data[i] += go.data[i] * y.data[i] * (1.0 - y.data[i]);
    });
    return Var{out};
}

Tape::Var Tape::relu_elem(Var a) {
    Matrix m = v(a.id);
    for (double& d : m.data) d = d > 0.0 ? d : 0.0;
    const int out = push(std::move(m));
    back_.push_back([a, out](Tape& t) {
        const Matrix& go = t.g(out);
        const Matrix& x = t.v(a.id);
        Matrix& ga = t.g(a.id);
        for (std::size_t i = 0; i < go.size(); ++i)
            if (x.data[i] > 0.0) ga.data[i] += go.data[i];
    });
    return Var{out};
}

Tape::Var Tape::row_softmax(Var a) {
    const Matrix& av = v(a.id);
    if (av.rows == 0 || av.cols == 0) throw std::invalid_argument("row_softmax: empty input");
    Matrix m = av;
    for (int i = 0; i < m.rows; ++i) {
        double mx = m.at(i, 0);
        for (int j = 1; j < m.cols; ++j) mx = std::max(mx, m.at(i, j));
        double sum = 0.0;
        for (int j = 0; j < m.cols; ++j) {
            m.at(i, j) = std::exp(m.at(i, j) - mx);
            sum += m.at(i, j);
        }
        for (int j = 0; j < m.cols; ++j) m.at(i, j) /= sum;
    }
    const int out = push(std::move(m));
    back_.push_back([a, out](Tape& t) {
        const Matrix& go = t.g(out);
        const Matrix& s = t.v(out);
        Matrix& ga = t.g(a.id);
        // Per row: dx = s .* (g - <g, s>)
        for (int i = 0; i < s.rows; ++i) {
            double dot = 0.0;
            for (int j = 0; j < s.cols; ++j) dot += go.at(i, j) * s.at(i, j);
            for (int j = 0; j < s.cols; ++j)
                ga.at(i, j) += s.at(i, j) * (go.at(i, j) - dot);
        }
    });
    return Var{out};
}

Tape::Var Tape::log_elem(Var a) {
    Matrix m = v(a.id);
    for (double& d : m.data) d = std::log(d);
    const int out = push(std::move(m));
    back_.push_back([a, out](Tape& t) {
        const Matrix& go = t.g(out);
        const Matrix& x = t.v(a.id);
        Matrix& ga = t.g(a.id);
        for (std::size_t i = 0; i < go.size(); ++i) ga.data[i] += go.data[i] / x.data[i];
    });
    return Var{out};
}

Tape::Var Tape::sum_all(Var a) {
    const Matrix& av = v(a.id);
    Matrix m(1, 1);
    double s = 0.0;
    for (double d : av.data) s += d;
    m.at(0, 0) = s;
    const int out = push(std::move(m));
    back_.push_back([a, out](Tape& t) {
        const double go = t.g(out).at(0, 0);
        Matrix& ga = t.g(a.id);
        for (double& d : ga.data) d += go;
    });
    return Var{out};
}

Tape::Var Tape::pick(Var a, int r, int c) {
    const Matrix& av = v(a.id);
    if (r < 0 || r >= av.rows || c < 0 || c >= av.cols)
        throw std::out_of_range("pick: index outside " + av.shape_str());
    Matrix m(1, 1);
    m.at(0, 0) = av.at(r, c);
    const int out = push(std::move(m));
    back_.push_back([a, r, c, out](Tape& t) { t.g(a.id).at(r, c) += t.g(out).at(0, 0); });
    return Var{out};
}

Tape::Var Tape::scale_by(Var m, Var s) {
    const Matrix& sv = v(s.id);
    if (sv.rows != 1 || sv.cols != 1) throw std::invalid_argument("scale_by: scalar must be 1x1");
    Matrix out_m = v(m.id);
    const double sval = sv.at(0, 0);
    for (double& d : out_m.data) d *= sval;
    const int out = push(std::move(out_m));
    back_.push_back([m, s, out](Tape& t) {
        const Matrix& go = t.g(out);
        const Matrix& mv = t.v(m.id);
        const double sval2 = t.v(s.id).at(0, 0);
        Matrix& gm = t.g(m.id);
        double acc = 0.0;
        for (std::size_t i = 0; i < go.size(); ++i) {
            gm.data[i] += go.data[i] * sval2;
            acc += go.data[i] * mv.data[i];
        }
        t.g(s.id).at(0, 0) += acc;
    });
    return Var{out};
}

Tape::Var Tape::gather_rows(Var table, const std::vector<int>& ids) {
    const Matrix& tv = v(table.id);
    Matrix m(static_cast<int>(ids.size()), tv.cols);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= tv.rows)
            throw std::out_of_range("gather_rows: token id " + std::to_string(ids[i]) +
                                    " outside table with " + std::to_string(tv.rows) + " rows");
        for (int j = 0; j < tv.cols; ++j) m.at(static_cast<int>(i), j) = tv.at(ids[i], j);
    }
    const int out = push(std::move(m));
    back_.push_back([table, ids, out](Tape& t) {
        const Matrix& go = t.g(out);
        Matrix& gt = t.g(table.id);
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (int j = 0; j < gt.cols; ++j)
                gt.at(ids[i], j) += go.at(static_cast<int>(i), j);
    });
    return Var{out};
}

Tape::Var Tape::append_col_const(Var m, const std::vector<double>& col) {
    const Matrix& mv = v(m.id);
    if (static_cast<int>(col.size()) != mv.rows)
        throw std::invalid_argument("append_col_const: column length != rows");
    Matrix out_m(mv.rows, mv.cols + 1);
    for (int i = 0; i < mv.rows; ++i) {
        for (int j = 0; j < mv.cols; ++j) out_m.at(i, j) = mv.at(i, j);
        out_m.at(i, mv.cols) = col[i];
    }
    const int out = push(std::move(out_m));
    back_.push_back([m, out](Tape& t) {
        const Matrix& go = t.g(out);
        Matrix& gm = t.g(m.id);
        for (int i = 0; i < gm.rows; ++i)
            for (int j = 0; j < gm.cols; ++j) gm.at(i, j) += go.at(i, j);
    });
    return Var{out};
}

Tape::Var Tape::reshape(Var a, int r, int c) {
    const Matrix& av = v(a.id);
    if (static_cast<std::size_t>(r) * c != av.size())
        throw std::invalid_argument("reshape: size mismatch");
    Matrix m(r, c, av.data);
    const int out = push(std::move(m));
    back_.push_back([a, out](Tape& t) {
        const Matrix& go = t.g(out);
        Matrix& ga = t.g(a.id);
        for (std::size_t i = 0; i < go.size(); ++i) ga.data[i] += go.data[i];
    });
    return Var{out};
}

Tape::Var Tape::vconcat(Var a, Var b) {
    const Matrix& av = v(a.id);
    const Matrix& bv = v(b.id);
    if (av.cols != bv.cols)
        throw std::invalid_argument("vconcat: column mismatch " + av.shape_str() + " vs " + bv.shape_str());
    Matrix m(av.rows + bv.rows, av.cols);
    std::copy(av.data.begin(), av.data.end(), m.data.begin());
    std::copy(bv.data.begin(), bv.data.end(), m.data.begin() + av.data.size());
    const int a_rows = av.rows;
    const int out = push(std::move(m));
    back_.push_back([a, b, a_rows, out](Tape& t) {
        const Matrix& go = t.g(out);
        Matrix& ga = t.g(a.id);
        Matrix& gb = t.g(b.id);
        for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] += go.data[i];
        const std::size_t off = static_cast<std::size_t>(a_rows) * go.cols;
        for (std::size_t i = 0; i < gb.size(); ++i) gb.data[i] += go.data[off + i];
    });
    return Var{out};
}

Tape::Var Tape::pad_rows(Var m, int total_rows) {
    const Matrix& mv = v(m.id);
    if (total_rows < mv.rows) throw std::invalid_argument("pad_rows: target smaller than input");
    Matrix out_m(total_rows, mv.cols);
    std::copy(mv.data.begin(), mv.data.end(), out_m.data.begin());
    const int out = push(std::move(out_m));
    back_.push_back([m, out](Tape& t) {
        const Matrix& go = t.g(out);
        Matrix& gm = t.g(m.id);
        for (std::size_t i = 0; i < gm.size(); ++i) gm.data[i] += go.data[i];
    });
    return Var{out};
}

Tape::Var Tape::hstack_scalars(const std::vector<Var>& xs) {
    Matrix m(1, static_cast<int>(xs.size()));
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const Matrix& xv = v(xs[i].id);
        if (xv.rows != 1 || xv.cols != 1)
            throw std::invalid_argument("hstack_scalars: inputs must be 1x1");
        m.at(0, static_cast<int>(i)) = xv.at(0, 0);
    }
    const int out = push(std::move(m));
    back_.push_back([xs, out](Tape& t) {
        const Matrix& go = t.g(out);
        for (std::size_t i = 0; i < xs.size(); ++i)
            t.g(xs[i].id).at(0, 0) += go.at(0, static_cast<int>(i));
    });
    return Var{out};
}

Tape::Var Tape::dropout_mask(Var a, const std::vector<double>& keep_mask, double keep_prob) {
    const Matrix& av = v(a.id);
    if (keep_mask.size() != av.size())
        throw std::invalid_argument("dropout_mask: mask size mismatch");
    Matrix m = av;
    const double inv = 1.0 / keep_prob;
    for (std::size_t i = 0; i < m.size(); ++i) m.data[i] *= keep_mask[i] * inv;
    const int out = push(std::move(m));
    back_.push_back([a, keep_mask, inv, out](Tape& t) {
        const Matrix& go = t.g(out);
        Matrix& ga = t.g(a.id);
        for (std::size_t i = 0; i < go.size(); ++i)
            ga.data[i] += go.data[i] * keep_mask[i] * inv;
    });
    return Var{out};
}

void Tape::backward(Var loss) {
    const Matrix& lv = v(loss.id);
    if (lv.rows != 1 || lv.cols != 1) throw std::invalid_argument("backward: loss must be 1x1");
    g(loss.id).at(0, 0) = 1.0;
    for (auto it = back_.rbegin(); it != back_.rend(); ++it) (*it)(*this);
    for (auto& [slot, id] : leased_) {
        const Matrix& gn = g(id);
        for (std::size_t i = 0; i < gn.size(); ++i) slot->grad.data[i] += gn.data[i];
    }
}

}  // namespace savehr
