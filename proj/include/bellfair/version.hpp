#pragma once

namespace bellfair
{
inline constexpr char const kVersion[] = "0.1.0";
}
