#pragma once

#include <vector>

#include <Eigen/Core>

namespace dronecam {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

}  // namespace dronecam

// Dense kernels behind the transformer. Every output element is produced by a
// single thread with a fixed accumulation order (explicit fma, ascending
// reduction index), so the OpenMP versions are bit-identical to the serial
// reference and to each other for any thread count, and a row's result never
// depends on how many other rows are processed in the same call.
namespace dronecam::kernels {

// y = x * w + b. x: n x in, w: in x out, b: out (or empty). y is resized.
void linear_forward(const Mat& x, const Mat& w, const Vec& b, Mat& y);
// dx = dy * w^T. dx is resized.
void linear_backward_input(const Mat& dy, const Mat& w, Mat& dx);
// dw += x^T * dy, db += column sums of dy (db may be empty to skip).
void linear_backward_params(const Mat& x, const Mat& dy, Mat& dw, Vec& db);

// Causal multi-head attention. q holds n query rows whose absolute positions
// are start .. start+n-1; k and v hold all m >= start+n key/value rows. Row i
// attends to keys 0 .. start+i. out (n x D) is resized. If probs is non-null
// it receives one n x m matrix per head (zeros above the causal boundary).
void attention_forward(const Mat& q, const Mat& k, const Mat& v, Eigen::Index start, int heads,
                       Mat& out, std::vector<Mat>* probs);
// Gradients for attention_forward. dq is resized; dk and dv are accumulated
// into and must already be m x D.
void attention_backward(const Mat& dout, const Mat& q, const Mat& k, const Mat& v,
                        const std::vector<Mat>& probs, Eigen::Index start, int heads, Mat& dq,
                        Mat& dk, Mat& dv);

namespace serial {
void linear_forward(const Mat& x, const Mat& w, const Vec& b, Mat& y);
void linear_backward_input(const Mat& dy, const Mat& w, Mat& dx);
void linear_backward_params(const Mat& x, const Mat& dy, Mat& dw, Vec& db);
void attention_forward(const Mat& q, const Mat& k, const Mat& v, Eigen::Index start, int heads,
                       Mat& out, std::vector<Mat>* probs);
void attention_backward(const Mat& dout, const Mat& q, const Mat& k, const Mat& v,
                        const std::vector<Mat>& probs, Eigen::Index start, int heads, Mat& dq,
                        Mat& dk, Mat& dv);
}  // namespace serial

int max_threads();
void set_threads(int n);

}  // namespace dronecam::kernels
