#include <cstdio>
int main(){ std::puts("wl placeholder"); return 0; }
