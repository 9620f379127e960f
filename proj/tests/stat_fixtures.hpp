#pragma once

#include <vector>

// Reference values computed with scipy.stats (f_oneway, ttest_rel, ttest_ind,
// betainc, f.sf); F for the 3-group set is exactly 315/34.
namespace hitl::fixtures {

inline const std::vector<std::vector<double>> three_groups{
    {6, 8, 4, 5, 3, 4}, {8, 12, 9, 11, 6, 8}, {13, 9, 11, 8, 7, 12}};
inline constexpr double three_groups_F = 315.0 / 34.0;
inline constexpr double three_groups_p = 0.0023987773293929083;

inline const std::vector<std::vector<double>> four_groups{
    {0.92, 1.01, 0.88, 0.95, 0.99, 1.05, 0.97, 0.91, 0.94, 1.02, 0.96},
    {0.61, 0.55, 0.68, 0.59, 0.63, 0.57, 0.66, 0.60, 0.58, 0.64, 0.62},
    {0.41, 0.45, 0.38, 0.44, 0.40, 0.47, 0.39, 0.43, 0.46, 0.42, 0.37},
    {0.49, 0.52, 0.47, 0.55, 0.50, 0.46, 0.53, 0.51, 0.48, 0.54, 0.45}};
inline constexpr double four_groups_F = 398.9234518348622;
inline constexpr double four_groups_p = 7.936050793694743e-30;

inline const std::vector<double> before{0.102, 0.119, 0.101, 0.121, 0.108, 0.096,
                                        0.125, 0.117, 0.099, 0.111, 0.120};
inline const std::vector<double> after{0.118, 0.131, 0.097, 0.142, 0.125, 0.109,
                                       0.137, 0.121, 0.115, 0.128, 0.133};
inline constexpr double paired_t = 5.945293601457623;
inline constexpr double paired_p = 0.00014213551995898466;

// groups 1 and 2 of four_groups
inline constexpr double student_t_abs = 18.130889343211148;
inline constexpr double student_p = 6.967026792626762e-14;

}  // namespace hitl::fixtures
